"""deltamem: associative-memory models, kernels, and experiments at desk scale."""

__version__ = "0.1.0"

from .errors import (
    DomainError,
    ExplosionError,
    InfeasibleError,
    SingularMatrixError,
    TrainingDiverged,
)
from .numerics import Rng

__all__ = [
    "__version__",
    "Rng",
    "DomainError",
    "ExplosionError",
    "InfeasibleError",
    "SingularMatrixError",
    "TrainingDiverged",
]
