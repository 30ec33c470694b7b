"""Exception types shared across the package."""


class ExplosionError(RuntimeError):
    """A recurrence produced a non-finite entry.

    Carries the step index at which the first non-finite value appeared so the
    caller can distinguish a numerically doomed configuration from a bug.
    """

    def __init__(self, step: int, what: str = "update"):
        self.step = step
        super().__init__(f"non-finite entries in {what} at step {step}")


class InfeasibleError(RuntimeError):
    """A sampling budget was exhausted before the target was met."""

    def __init__(self, message: str, best_epsilon: float):
        self.best_epsilon = best_epsilon
        super().__init__(f"{message} (best epsilon achieved: {best_epsilon:.6f})")


class DomainError(ValueError):
    """An input fell outside the guaranteed domain of a guarded function."""


class SingularMatrixError(RuntimeError):
    """A matrix required to be invertible is singular or near-singular."""

    def __init__(self, message: str, cond: float):
        self.cond = cond
        super().__init__(f"{message} (condition estimate: {cond:.3e})")


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite; carries the log up to the failure."""

    def __init__(self, step: int, log):
        self.step = step
        self.log = log
        super().__init__(f"training loss became non-finite at step {step}")
