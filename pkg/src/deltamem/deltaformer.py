"""Softmax-style attention with delta-rule writes.

The mechanism stores derived values u instead of raw values v:

    u_t = alpha * v_t - beta * sum_{i<t} kappa1(k_i, w_t) u_i
    o_t = sum_{i<=t} kappa2(k_i, q_t) u_i

Three algorithms compute the same u: a strictly sequential recurrence
(`compute_u_naive`), a single unit-lower triangular solve of
(I + A) U = alpha V (`compute_u_inverse`), and a chunk-wise scheme that
handles earlier chunks by attention against the cached (k, u) history and
each chunk interior by a small log-depth triangular inversion
(`compute_u_chunked`).  With beta = 0 the layer degenerates to standard
softmax attention; with linear kernels, w = k and no dot scaling it
reproduces the delta-rule memory updates exactly.

Erase-side normalization (`normalize_u="softmax_z"`) normalizes over the
strict past, readout softmax over the inclusive past.  The chunked path
merges the two partial normalizers through their log-sum-exps with logistic
weights 1/(1 + exp(z_other - z_self)).  The rms_norm option instead rescales
the finished u rows to unit RMS; it is applied after the recurrence so all
three algorithms stay equivalent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ExplosionError
from .kernels import KernelSpec, kernel_eval, kernel_on_dots
from .numerics import tri_inverse_padded, tri_solve_unit_lower

__all__ = [
    "DeltaFormerConfig",
    "SequenceBatch",
    "erase_matrix",
    "compute_u_naive",
    "compute_u_inverse",
    "compute_u_chunked",
    "readout",
    "grouped_kappa1",
    "fit_round_coefficients",
]


@dataclass(frozen=True)
class DeltaFormerConfig:
    """Kernel, gate, and normalization choices for one head.

    kappa1 drives the erase similarity, kappa2 the readout similarity.
    scaled=True divides dot products by sqrt(d) inside both kernels;
    the state-tracking experiments turn this off.  kappa1_fn, when given,
    replaces kappa1 with an arbitrary vectorized map on (scaled) dots —
    the hook used for the guarded lattice-rounding similarity.
    group_heads/group_weights compose kappa1 as sum_j a_j kappa1(k, j*w).
    """

    kappa1: KernelSpec
    kappa2: KernelSpec = KernelSpec("softmax_row")
    alpha: float = 1.0
    beta: float = 1.0
    w_source: str = "same_as_key"
    group_heads: int = 1
    group_weights: tuple[float, ...] | None = None
    normalize_u: str = "none"
    chunk_size: int = 32
    scaled: bool = True
    kappa1_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.w_source not in ("same_as_key", "separate"):
            raise ValueError(f"unknown w_source {self.w_source!r}")
        if self.normalize_u not in ("none", "softmax_z", "rms_norm"):
            raise ValueError(f"unknown normalize_u {self.normalize_u!r}")
        c = self.chunk_size
        if c < 1 or c & (c - 1):
            raise ValueError(f"chunk_size must be a power of two, got {c}")
        if self.group_heads < 1:
            raise ValueError("group_heads must be >= 1")
        if self.group_weights is None:
            if self.group_heads != 1:
                raise ValueError("group_weights required when group_heads > 1")
            object.__setattr__(self, "group_weights", (1.0,))
        elif len(self.group_weights) != self.group_heads:
            raise ValueError("group_weights length must equal group_heads")
        if self.kappa1.kind == "softmax_row" and self.normalize_u != "softmax_z":
            raise ValueError("softmax_row kappa1 requires normalize_u='softmax_z'")
        if self.normalize_u == "softmax_z" and self.kappa1.kind not in ("exp", "softmax_row"):
            raise ValueError("softmax_z normalization applies to the exponential kernel")


@dataclass(frozen=True)
class SequenceBatch:
    """Per-head projection stacks: rows are time steps."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        k = np.asarray(self.k, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        w = None if self.w is None else np.asarray(self.w, dtype=np.float64)
        lengths = {q.shape[0], k.shape[0], v.shape[0]} | ({w.shape[0]} if w is not None else set())
        if len(lengths) != 1:
            raise ValueError("q, k, v, w must share the sequence length")
        if q.shape[1] != k.shape[1] or (w is not None and w.shape[1] != k.shape[1]):
            raise ValueError("q, k, w must share the feature dimension")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @property
    def length(self) -> int:
        return self.k.shape[0]


def _write_vectors(cfg: DeltaFormerConfig, seq: SequenceBatch) -> np.ndarray:
    if cfg.w_source == "separate":
        if seq.w is None:
            raise ValueError("w_source='separate' but the batch carries no w stack")
        return seq.w
    return seq.k if seq.w is None else seq.w


def _dot_scale(cfg: DeltaFormerConfig, d: int) -> float:
    return 1.0 / math.sqrt(d) if cfg.scaled else 1.0


def _erase_weights(cfg: DeltaFormerConfig, dots: np.ndarray, d: int) -> np.ndarray:
    """Unnormalized erase weights on raw (already scaled) dots.

    Overflow is allowed to produce inf here; the compute_u paths detect
    non-finite results and raise ExplosionError with the step index.
    """
    if cfg.kappa1_fn is not None:
        return np.asarray(cfg.kappa1_fn(dots), dtype=np.float64)
    acc = np.zeros_like(dots)
    with np.errstate(over="ignore", invalid="ignore"):
        for j, a_j in enumerate(cfg.group_weights, start=1):
            acc = acc + a_j * kernel_on_dots(cfg.kappa1, j * dots, d)
    return acc


def erase_matrix(cfg: DeltaFormerConfig, seq: SequenceBatch) -> np.ndarray:
    """The strictly lower triangular A with A[t, i] = beta * kappa1(k_i, w_t).

    Rows are normalized over the strict past first when softmax_z is on;
    beta scales the whole (normalized) erase term.
    """
    t = seq.length
    w = _write_vectors(cfg, seq)
    dots = (w @ seq.k.T) * _dot_scale(cfg, seq.k.shape[1])
    strict = np.tril(np.ones((t, t), dtype=bool), k=-1)
    if cfg.normalize_u == "softmax_z":
        neg = np.where(strict, dots, -np.inf)
        mx = neg.max(axis=1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.where(strict, np.exp(neg - mx), 0.0)
        z = e.sum(axis=1, keepdims=True)
        weights = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    else:
        weights = np.where(strict, _erase_weights(cfg, dots, seq.k.shape[1]), 0.0)
    return cfg.beta * weights


def _check_finite_rows(u: np.ndarray, what: str):
    bad = ~np.isfinite(u).all(axis=1)
    if bad.any():
        raise ExplosionError(int(np.flatnonzero(bad)[0]), what)


def _postprocess_u(cfg: DeltaFormerConfig, u: np.ndarray) -> np.ndarray:
    if cfg.normalize_u != "rms_norm":
        return u
    rms = np.sqrt(np.mean(u * u, axis=1, keepdims=True))
    return np.divide(u, rms, out=np.zeros_like(u), where=rms > 0)


def compute_u_naive(cfg: DeltaFormerConfig, seq: SequenceBatch) -> np.ndarray:
    """Strictly sequential reference: one erase-and-write per step."""
    t_len = seq.length
    w = _write_vectors(cfg, seq)
    scale = _dot_scale(cfg, seq.k.shape[1])
    d = seq.k.shape[1]
    u = np.zeros((t_len, seq.v.shape[1]))
    for t in range(t_len):
        acc = cfg.alpha * seq.v[t]
        if t > 0:
            with np.errstate(over="ignore", invalid="ignore"):
                dots = (seq.k[:t] @ w[t]) * scale
                if cfg.normalize_u == "softmax_z":
                    e = np.exp(dots - dots.max())
                    weights = e / e.sum()
                else:
                    weights = _erase_weights(cfg, dots, d)
                acc = acc - cfg.beta * (weights @ u[:t])
        if not np.all(np.isfinite(acc)):
            raise ExplosionError(t, "u recurrence")
        u[t] = acc
    return _postprocess_u(cfg, u)


def compute_u_inverse(cfg: DeltaFormerConfig, seq: SequenceBatch) -> np.ndarray:
    """Matrix form: U = (I + A)^{-1} (alpha V) by one triangular solve."""
    a = erase_matrix(cfg, seq)
    _check_finite_rows(a, "erase matrix")
    u = tri_solve_unit_lower(a, cfg.alpha * seq.v)
    _check_finite_rows(u, "u solve")
    return _postprocess_u(cfg, u)


def compute_u_chunked(cfg: DeltaFormerConfig, seq: SequenceBatch) -> np.ndarray:
    """Chunked schedule: earlier chunks contribute by attention against the
    cached (k, u) history; each chunk interior is a log-depth inversion.

    A final ragged chunk (when the length is not a multiple of chunk_size)
    is solved through an identity-padded inversion, which is exact.
    """
    t_len = seq.length
    c = cfg.chunk_size
    w = _write_vectors(cfg, seq)
    scale = _dot_scale(cfg, seq.k.shape[1])
    d = seq.k.shape[1]
    softz = cfg.normalize_u == "softmax_z"
    u = np.zeros((t_len, seq.v.shape[1]))
    for start in range(0, t_len, c):
        end = min(start + c, t_len)
        cc = end - start
        k_chunk = seq.k[start:end]
        w_chunk = w[start:end]
        v_chunk = seq.v[start:end]
        strict = np.tril(np.ones((cc, cc), dtype=bool), k=-1)
        local_dots = (w_chunk @ k_chunk.T) * scale

        if softz:
            neg = np.where(strict, local_dots, -np.inf)
            with np.errstate(over="ignore"):
                z_local = logsumexp(neg, axis=1)
            mx = neg.max(axis=1, keepdims=True)
            mx = np.where(np.isfinite(mx), mx, 0.0)
            e = np.where(strict, np.exp(neg - mx), 0.0)
            zs = e.sum(axis=1, keepdims=True)
            local_soft = np.divide(e, zs, out=np.zeros_like(e), where=zs > 0)
            if start == 0:
                a_local = local_soft
                p = cfg.alpha * v_chunk
            else:
                prev_dots = (w_chunk @ seq.k[:start].T) * scale
                z_prev = logsumexp(prev_dots, axis=1)
                inter = np.exp(prev_dots - z_prev[:, None]) @ u[:start]
                # Merge the two partial softmax normalizers: each side is
                # reweighted by its share of the total normalizer.
                p = cfg.alpha * v_chunk - cfg.beta * inter * expit(z_prev - z_local)[:, None]
                a_local = local_soft * expit(z_local - z_prev)[:, None]
        else:
            a_local = np.where(strict, _erase_weights(cfg, local_dots, d), 0.0)
            if start == 0:
                p = cfg.alpha * v_chunk
            else:
                prev_w = _erase_weights(cfg, (w_chunk @ seq.k[:start].T) * scale, d)
                p = cfg.alpha * v_chunk - cfg.beta * (prev_w @ u[:start])

        a_local = cfg.beta * a_local
        _check_finite_rows(a_local, "chunk erase matrix")
        inv = tri_inverse_padded(a_local)
        u[start:end] = inv @ p
        _check_finite_rows(u[start:end], "chunk solve")
    return _postprocess_u(cfg, u)


def readout(cfg: DeltaFormerConfig, seq: SequenceBatch, u: np.ndarray) -> np.ndarray:
    """Causal (inclusive) recall: o_t = sum_{i<=t} kappa2(k_i, q_t) u_i."""
    t = seq.length
    scale = _dot_scale(cfg, seq.k.shape[1])
    scores = (seq.q @ seq.k.T) * scale
    mask = np.tril(np.ones((t, t), dtype=bool))
    if cfg.kappa2.kind == "softmax_row":
        neg = np.where(mask, scores, -np.inf)
        mx = neg.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(neg - mx), 0.0)
        weights = e / e.sum(axis=1, keepdims=True)
    else:
        weights = np.where(mask, kernel_on_dots(cfg.kappa2, scores, seq.k.shape[1]), 0.0)
    return weights @ u


def grouped_kappa1(
    weights, base: KernelSpec, k: np.ndarray, w: np.ndarray
) -> float:
    """Weighted mixture of argument-scaled kernels: sum_j a_j kappa(k, j*w)."""
    w = np.asarray(w, dtype=np.float64)
    return float(sum(a_j * kernel_eval(base, k, j * w) for j, a_j in enumerate(weights, start=1)))


def fit_round_coefficients(g: int = 4) -> np.ndarray:
    """Mixture weights making sum_j a_j exp(j x) equal x on x in {-1, 0, 1, 2}.

    Four scaled exponential heads suffice to interpolate the four lattice
    points the guarded rounding similarity must hit.
    """
    if g != 4:
        raise ValueError("the lattice interpolation uses exactly 4 heads")
    xs = np.array([-1.0, 0.0, 1.0, 2.0])
    m = np.exp(np.outer(xs, np.arange(1, g + 1)))
    return np.linalg.solve(m, xs)
