"""Dense float64 linear algebra and seeded randomness.

Everything here is a pure function over immutable inputs; all
correctness-critical computation is float64.  Arrays passed in from outside
the package are validated (shape, finiteness) and copied, never mutated.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "as_matrix",
    "matmul",
    "row_softmax",
    "causal_mask",
    "tri_solve_unit_lower",
    "tri_inverse_logdepth",
    "tri_inverse_padded",
    "Rng",
]


def as_matrix(data, *, name: str = "matrix") -> np.ndarray:
    """Validate external input as a finite 2-D float64 array (copied)."""
    a = np.array(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def causal_mask(t: int, *, strict: bool = False) -> np.ndarray:
    """Boolean (t, t) mask, True where attention is allowed.

    strict=True excludes the diagonal (each row sees only earlier positions).
    """
    return np.tril(np.ones((t, t), dtype=bool), k=-1 if strict else 0)


def row_softmax(a: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax with max-subtraction; masked entries get weight 0.

    Every row must keep at least one unmasked entry; a fully masked row is an
    error because its weights would be undefined.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"row_softmax expects a 2-D array, got shape {a.shape}")
    if mask is None:
        if not np.all(np.isfinite(a)):
            raise ValueError("row_softmax input contains non-finite entries")
        shifted = a - a.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {a.shape}")
    if not np.all(np.isfinite(a[mask])):
        raise ValueError("row_softmax input contains non-finite unmasked entries")
    alive = mask.any(axis=1)
    if not alive.all():
        raise ValueError(f"fully masked row(s): {np.flatnonzero(~alive).tolist()}")
    neg = np.where(mask, a, -np.inf)
    shifted = neg - neg.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def _check_strictly_lower(a: np.ndarray, *, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if np.any(np.triu(a) != 0.0):
        raise ValueError(f"{name} must be strictly lower triangular (zero diagonal)")
    return a


def tri_solve_unit_lower(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (I + a) X = rhs for strictly lower triangular a.

    Forward substitution via LAPACK's unit-lower triangular solve; the
    diagonal of `a` is ignored (taken as the implicit identity).
    """
    a = _check_strictly_lower(a, name="a")
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != a.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {a.shape[0]}")
    if a.shape[0] == 0:
        return rhs.copy()
    return solve_triangular(a, rhs, lower=True, unit_diagonal=True)


def _logdepth_steps(c: int) -> int:
    """Number of doubling steps for size c (= log2 c); c must be a power of two."""
    if c < 1 or c & (c - 1):
        raise ValueError(f"size must be a power of two, got {c}")
    return c.bit_length() - 1


def _doubling_iterates(a: np.ndarray):
    """Yield the (X_i, Y_i) pairs of the log-depth inversion iteration.

    Starts at [I - A, A^2] and squares the correction each step; after
    log2(C) iterates X holds (I + A)^{-1} exactly (A is nilpotent).
    """
    c = a.shape[0]
    x = np.eye(c) - a
    y = a @ a
    yield x, y
    for _ in range(_logdepth_steps(c) - 1):
        x = x + x @ y
        y = y @ y
        yield x, y


def tri_inverse_logdepth(a: np.ndarray) -> np.ndarray:
    """Invert (I + a) for strictly lower triangular a of power-of-two size.

    Uses the doubling iteration (I+A)^{-1} = (I-A)(I+A^2)(I+A^4)..., which
    terminates because A^C = 0; exactly log2(C) matrix-product steps.
    """
    a = _check_strictly_lower(a, name="a")
    c = a.shape[0]
    _logdepth_steps(c)  # validates power-of-two
    if c == 1:
        return np.eye(1)
    for x, _ in _doubling_iterates(a):
        pass
    return x


def tri_inverse_padded(a: np.ndarray) -> np.ndarray:
    """Invert (I + a) for strictly lower triangular a of any size.

    Pads with an identity block up to the next power of two, runs the
    log-depth iteration, and slices the result back.
    """
    a = _check_strictly_lower(a, name="a")
    c = a.shape[0]
    if c == 0:
        return a.copy()
    p = 1 << (c - 1).bit_length()
    if p == c:
        return tri_inverse_logdepth(a)
    padded = np.zeros((p, p))
    padded[:c, :c] = a
    return tri_inverse_logdepth(padded)[:c, :c]


class Rng:
    """Deterministic random source: Philox counter-based generator.

    The stream is fully determined by (seed, path), where `path` is the tuple
    of split indices taken from the root.  Gaussian variates use Box-Muller
    on top of the uniform stream so the mapping from bits to normals is
    explicit and easy to reproduce elsewhere.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = _path
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, index: int) -> "Rng":
        """Independent child stream; identical (seed, path, index) => identical stream."""
        return Rng(self.seed, self.path + (int(index),))

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform float64 samples in [0, 1)."""
        return self._gen.random(size=shape, dtype=np.float64)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal samples via Box-Muller (pairs of uniforms)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = 1.0 - self._gen.random(size=half, dtype=np.float64)  # (0, 1]
        u2 = self._gen.random(size=half, dtype=np.float64)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)
