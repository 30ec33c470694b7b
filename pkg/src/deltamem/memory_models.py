"""Recurrent associative-memory updaters and their optimization objectives.

Every model here is an instance of the general recurrence
S_t = A_t S_{t-1} B_t + C_t, paired with a scalar objective L_t(S_{t-1})
whose single gradient-descent step reproduces the recurrence:
S_t = S_{t-1} - dL_t/dS_{t-1}.  That gradient equivalence is the binding
contract and is what `gradient_step_check` verifies by finite differences.

The softmax-flavoured rows conceptually write v phi(k)^T with an
infinite-dimensional feature map phi.  Two representations co-exist:

* an exact cached-history form — a list of (key, value, scalar weight)
  triples whose weight schedule follows the row's (A, C) pair, read out via
  `softmax_recall` with the exponential kernel; and
* a finite surrogate state `s` that carries the same (A, C) schedule with
  the raw key standing in for phi(k).  The schedule algebra is identical in
  any feature dimension, so the surrogate is what the finite-difference
  gradient check exercises.

Loss values follow the general construction exactly.  Two printed
simplifications differ from it without affecting gradients: the delta-rule
row's L2 form is the general value plus the constant ||v||^2/2, and the
gated-normalized-softmax row's compact form drops a lambda/t term that only
vanishes for large t (here the exact form is used so the gradient check
holds at every t).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ExplosionError, SingularMatrixError

__all__ = [
    "MODELS",
    "RecurrentSpec",
    "MemoryState",
    "StepInput",
    "initial_state",
    "update",
    "loss_eval",
    "gradient_step_check",
    "softmax_recall",
    "analytical_optimum",
    "frobenius_trace",
    "norm_trace_csv",
]

MODELS = (
    "linear_attn",
    "gated_linear_attn",
    "delta_net",
    "delta_net_momentum",
    "softmax_no_norm",
    "softmax_norm",
    "gated_softmax_norm",
)
_GATED = ("gated_linear_attn", "gated_softmax_norm")
_SOFTMAX = ("softmax_no_norm", "softmax_norm", "gated_softmax_norm")
_MOMENTUM = ("delta_net_momentum",)


@dataclass(frozen=True)
class RecurrentSpec:
    """One row of the memory-update family.

    gate_lambda: per-row decay gate in (0,1)^d_v (gated models); applied as a
    left diagonal, i.e. it scales the d_v axis of S.  momentum_eta in (0,1)
    (momentum model).  feature_tau: temperature of the exponential kernel
    used by cached-history recall of the softmax models (None = sqrt(d_k)).
    """

    model: str
    gate_lambda: np.ndarray | None = None
    momentum_eta: float | None = None
    feature_tau: float | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}, expected one of {MODELS}")
        if self.model in _GATED:
            lam = np.asarray(self.gate_lambda, dtype=np.float64)
            if lam.ndim != 1 or np.any(lam <= 0.0) or np.any(lam >= 1.0):
                raise ValueError("gate_lambda must be a vector with entries strictly in (0,1)")
            object.__setattr__(self, "gate_lambda", lam)
        if self.model in _MOMENTUM:
            if self.momentum_eta is None or not 0.0 < self.momentum_eta < 1.0:
                raise ValueError("momentum_eta must lie strictly in (0,1)")


@dataclass(frozen=True)
class StepInput:
    """A key-value pair to be written."""

    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if k.ndim != 1 or v.ndim != 1:
            raise ValueError("k and v must be vectors")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise ValueError("k and v must be finite")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class MemoryState:
    """Associative memory after t writes.

    s: the (d_v, d_k) memory matrix (for softmax models: the finite
    surrogate carrying the same update schedule).  c: the momentum
    accumulator (momentum model only).  history: exact cached form for the
    softmax models, a tuple of (key, value, weight) triples.
    """

    s: np.ndarray
    t: int = 0
    c: np.ndarray | None = None
    history: tuple = field(default_factory=tuple)


def initial_state(spec: RecurrentSpec, d_v: int, d_k: int) -> MemoryState:
    s = np.zeros((d_v, d_k))
    c = np.zeros((d_v, d_k)) if spec.model in _MOMENTUM else None
    return MemoryState(s=s, t=0, c=c)


def _schedule(spec: RecurrentSpec, inp: StepInput, t: int, c_prev: np.ndarray | None):
    """The (A, B, C) matrices of the row at step t (phi taken as identity)."""
    k, v = inp.k, inp.v
    d_v, d_k = v.size, k.size
    a = np.eye(d_v)
    b = np.eye(d_k)
    c = np.outer(v, k)
    if spec.model == "gated_linear_attn":
        a = np.diag(spec.gate_lambda)
    elif spec.model in ("delta_net", "delta_net_momentum"):
        b = np.eye(d_k) - np.outer(k, k)
        if spec.model == "delta_net_momentum":
            c = spec.momentum_eta * c_prev + np.outer(v, k)
    elif spec.model == "softmax_norm":
        a = (t - 1) / t * np.eye(d_v)
        c = np.outer(v, k) / t
    elif spec.model == "gated_softmax_norm":
        a = (t - 1) / t * np.diag(spec.gate_lambda)
        c = np.outer(v, k) / t
    return a, b, c


def update(spec: RecurrentSpec, state: MemoryState, inp: StepInput) -> MemoryState:
    """Apply one write: S_t = A_t S_{t-1} B_t + C_t."""
    t = state.t + 1
    with np.errstate(over="ignore", invalid="ignore"):
        a, b, c = _schedule(spec, inp, t, state.c)
        s = a @ state.s @ b + c
    if not np.all(np.isfinite(s)):
        raise ExplosionError(t)
    c_next = c if spec.model in _MOMENTUM else None
    history = state.history
    if spec.model in _SOFTMAX:
        history = _history_step(spec, history, inp, t)
    return MemoryState(s=s, t=t, c=c_next, history=history)


def _history_step(spec: RecurrentSpec, history: tuple, inp: StepInput, t: int) -> tuple:
    """Exact cached form of the softmax rows: rescale then append.

    softmax_no_norm keeps unit weights; the normalized rows decay old
    weights by (t-1)/t and write with weight 1/t (so after t writes every
    weight equals 1/t).  The gated row additionally folds the vector gate
    into the stored values, since diag(lambda) acts on the value axis.
    """
    if spec.model == "softmax_no_norm":
        return history + ((inp.k, inp.v, 1.0),)
    decay = (t - 1) / t
    lam = spec.gate_lambda if spec.model == "gated_softmax_norm" else None
    rescaled = tuple(
        (k, v if lam is None else lam * v, w * decay) for (k, v, w) in history
    )
    return rescaled + ((inp.k, inp.v, 1.0 / t),)


def softmax_recall(spec: RecurrentSpec, state: MemoryState, q: np.ndarray) -> np.ndarray:
    """Read the cached-history softmax memory: sum_i w_i exp(k_i.q/tau) v_i."""
    if spec.model not in _SOFTMAX:
        raise ValueError(f"{spec.model} has no cached-history representation")
    q = np.asarray(q, dtype=np.float64)
    tau = spec.feature_tau if spec.feature_tau is not None else math.sqrt(q.size)
    out = np.zeros_like(state.history[0][1]) if state.history else np.zeros(0)
    for k, v, w in state.history:
        out = out + w * math.exp(float(k @ q) / tau) * v
    return out


def loss_eval(spec: RecurrentSpec, state: MemoryState, inp: StepInput) -> float:
    """The row's objective L_t(S_{t-1}) whose gradient step gives update()."""
    s, k, v = state.s, inp.k, inp.v
    t = state.t + 1
    if spec.model == "linear_attn" or spec.model == "softmax_no_norm":
        return -float(v @ (s @ k))
    if spec.model == "gated_linear_attn":
        reg = 0.5 * float(np.sum((1.0 - spec.gate_lambda)[:, None] * s * s))
        return reg - float(v @ (s @ k))
    if spec.model == "delta_net":
        return 0.5 * float(np.sum((s @ k - v) ** 2))
    if spec.model == "delta_net_momentum":
        c = spec.momentum_eta * state.c + np.outer(v, k)
        return 0.5 * float(np.sum((s @ k) ** 2)) - float(np.sum(c * s))
    if spec.model == "softmax_norm":
        return (0.5 * float(np.sum(s * s)) - float(v @ (s @ k))) / t
    if spec.model == "gated_softmax_norm":
        # Exact general-form value; its compact (1-lambda)/t rendering is the
        # large-t limit and would break gradient equivalence at small t.
        shrink = 1.0 - (t - 1) / t * spec.gate_lambda
        return 0.5 * float(np.sum(shrink[:, None] * s * s)) - float(v @ (s @ k)) / t
    raise AssertionError(spec.model)


def gradient_step_check(
    spec: RecurrentSpec, state: MemoryState, inp: StepInput, eps: float = 1e-6
) -> float:
    """Max |update(S) - (S - dL/dS)| with the gradient by central differences."""
    grad = np.zeros_like(state.s)
    it = np.nditer(state.s, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bump = np.zeros_like(state.s)
        bump[idx] = eps
        up = loss_eval(spec, replace(state, s=state.s + bump), inp)
        dn = loss_eval(spec, replace(state, s=state.s - bump), inp)
        grad[idx] = (up - dn) / (2.0 * eps)
        it.iternext()
    stepped = state.s - grad
    return float(np.max(np.abs(update(spec, state, inp).s - stepped)))


def analytical_optimum(w_k: np.ndarray, w_v: np.ndarray, x_samples: np.ndarray) -> np.ndarray:
    """Minimizer of E[||S W_k x - W_v x||^2 / 2] over the sample second moment.

    Returns (W_v M W_k^T)(W_k M W_k^T)^{-1} with M the empirical second
    moment of the rows of x_samples.  When W_k is square and invertible this
    equals W_v W_k^{-1} (the second moment cancels).
    """
    w_k = np.asarray(w_k, dtype=np.float64)
    w_v = np.asarray(w_v, dtype=np.float64)
    x = np.asarray(x_samples, dtype=np.float64)
    second = x.T @ x / x.shape[0]
    gram = w_k @ second @ w_k.T
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError("W_k E[xx^T] W_k^T is not invertible", cond)
    rhs = w_v @ second @ w_k.T
    return np.linalg.solve(gram.T, rhs.T).T


def frobenius_trace(
    spec: RecurrentSpec, state: MemoryState, inputs: list[StepInput]
) -> list[tuple[int, float]]:
    """Frobenius norm of S after each write; row zero is the initial state."""
    rows = [(state.t, float(np.linalg.norm(state.s)))]
    for inp in inputs:
        state = update(spec, state, inp)
        rows.append((state.t, float(np.linalg.norm(state.s))))
    return rows


def norm_trace_csv(rows: list[tuple[int, float]]) -> str:
    buf = io.StringIO()
    buf.write("step,frobenius_norm\n")
    for step, norm in rows:
        buf.write(f"{step},{norm!r}\n")
    return buf.getvalue()
