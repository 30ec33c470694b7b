"""Exact state tracking with almost-orthogonal keys and guarded rounding.

n values are written under n nearly orthogonal unit keys; a swap of the
values at positions (t1, t2) is appended as the single pair
(k_t1 - k_t2, 0).  All erase and readout similarities are the lattice map
f: nearest point of {-1, 0, 1, 2}, which is exact whenever every pairwise
|k_i . k_j| stays below 1/8 (f's rounding neighborhoods then never overlap).
Reads are query-only: they evaluate the readout against the current cache
without appending anything.  Rewriting the n current values into a fresh
cache every m swaps keeps the cache length O(n) without changing any read.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .deltaformer import DeltaFormerConfig, SequenceBatch, compute_u_naive
from .errors import DomainError, InfeasibleError
from .kernels import KernelSpec, kernel_on_dots
from .numerics import Rng

__all__ = [
    "KeyEnsemble",
    "SwapTrace",
    "ReadRecord",
    "TrackingResult",
    "orthonormal_keys",
    "generate_keys",
    "best_effort_keys",
    "round_f",
    "identity_values",
    "random_trace",
    "encode_swaps",
    "run_tracking",
    "permutation_oracle",
    "save_trace",
    "load_trace",
    "results_csv",
]

EPS_BOUND = 0.125  # the rounding construction needs epsilon < 1/8
_FLOAT_SLACK = 1e-9  # admits exact-arithmetic roundoff when epsilon == 0


@dataclass(frozen=True)
class KeyEnsemble:
    """Unit key rows with realized max off-diagonal |dot| below 1/8."""

    keys: np.ndarray
    epsilon: float

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.float64)
        norms = np.linalg.norm(keys, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("ensemble rows must be unit norm")
        if not self.epsilon < EPS_BOUND:
            raise ValueError(f"epsilon must be < 1/8, got {self.epsilon}")
        object.__setattr__(self, "keys", keys)

    @property
    def n(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]


def _max_offdiag(keys: np.ndarray) -> float:
    if keys.shape[0] < 2:
        return 0.0
    dots = keys @ keys.T
    np.fill_diagonal(dots, 0.0)
    return float(np.max(np.abs(dots)))


def orthonormal_keys(n: int, d: int, rng: Rng | None = None) -> KeyEnsemble:
    """Exactly orthonormal rows (requires n <= d); random basis when rng given."""
    if n > d:
        raise ValueError(f"orthonormal rows need n <= d, got n={n}, d={d}")
    if rng is None:
        keys = np.eye(d)[:n]
    else:
        q, r = np.linalg.qr(rng.normal((d, d)))
        keys = (q * np.sign(np.diag(r))).T[:n]
        keys /= np.linalg.norm(keys, axis=1, keepdims=True)
    return KeyEnsemble(keys=keys, epsilon=_max_offdiag(keys))


def generate_keys(
    n: int, d: int, eps_target: float, rng: Rng, max_attempts: int = 100_000
) -> KeyEnsemble:
    """Rejection-sample unit keys until every pairwise |dot| <= eps_target.

    Rows are drawn Gaussian, normalized, and accepted one at a time against
    the rows already kept (a stuck row forces a restart), so the ensemble is
    accepted exactly when its max off-diagonal |dot| meets the target.
    max_attempts bounds the total number of row draws; exhaustion raises
    InfeasibleError reporting the best epsilon any full ensemble reached.
    """
    if not eps_target < EPS_BOUND:
        raise ValueError(f"eps_target must be < 1/8, got {eps_target}")
    draws = 0
    longest = 0
    best_partial_eps = np.inf
    per_row_budget = 500
    while draws < max_attempts:
        rows: list[np.ndarray] = []
        stuck = False
        while len(rows) < n and not stuck:
            tries = 0
            while draws < max_attempts:
                cand = rng.normal((d,))
                cand /= np.linalg.norm(cand)
                draws += 1
                tries += 1
                if not rows or np.max(np.abs(np.asarray(rows) @ cand)) <= eps_target:
                    rows.append(cand)
                    break
                if tries >= per_row_budget:
                    stuck = True
                    break
            else:
                stuck = True
        if len(rows) == n:
            keys = np.asarray(rows)
            return KeyEnsemble(keys=keys, epsilon=_max_offdiag(keys))
        if len(rows) > longest:
            longest = len(rows)
            best_partial_eps = _max_offdiag(np.asarray(rows)) if len(rows) > 1 else 0.0
    raise InfeasibleError(
        f"no {n}-key ensemble in dimension {d} reached eps<={eps_target} within "
        f"{max_attempts} draws (longest conforming prefix: {longest} keys); "
        "a larger d would help",
        float(best_partial_eps),
    )


def best_effort_keys(n: int, d: int, rng: Rng, iters: int = 2000) -> tuple[np.ndarray, float]:
    """Greedy coherence reduction without the 1/8 gate (stress-test keys).

    Starts from normalized Gaussian rows and repeatedly resamples a row of
    the currently worst pair, keeping improvements.  Returns the keys and
    their realized max off-diagonal |dot|, which for n >> d will sit well
    above 1/8 — that regime is exactly what the stress experiments probe.
    """
    keys = rng.normal((n, d))
    keys /= np.linalg.norm(keys, axis=1, keepdims=True)
    dots = keys @ keys.T
    np.fill_diagonal(dots, 0.0)
    current = float(np.max(np.abs(dots)))
    for it in range(iters):
        i, j = np.unravel_index(np.argmax(np.abs(dots)), dots.shape)
        victim = int(i if it % 2 == 0 else j)
        cand = rng.normal((d,))
        cand /= np.linalg.norm(cand)
        new_col = keys @ cand
        new_col[victim] = 0.0
        others = np.abs(dots)
        others[victim, :] = 0.0
        others[:, victim] = 0.0
        new_max = max(float(np.max(np.abs(new_col))), float(np.max(others)))
        if new_max < current:
            keys[victim] = cand
            dots[victim, :] = new_col
            dots[:, victim] = new_col
            dots[victim, victim] = 0.0
            current = new_max
    return keys, current


def round_f(x, eps: float):
    """Nearest point of {-1, 0, 1, 2}, guarded to inputs within 4*eps of it.

    Inputs farther than 4*eps (plus float slack) from every lattice point are
    outside the construction's guarantee, so they raise DomainError instead
    of silently corrupting the tracked state.  Accepts scalars or arrays.
    """
    arr = np.asarray(x, dtype=np.float64)
    nearest = np.clip(np.round(arr), -1.0, 2.0)
    err = np.abs(arr - nearest)
    radius = max(4.0 * eps, _FLOAT_SLACK)
    if np.any(err > radius):
        worst = float(np.max(err))
        raise DomainError(
            f"similarity {worst:.6f} away from the nearest lattice point exceeds 4*eps={4 * eps:.6f}"
        )
    if np.isscalar(x) or arr.ndim == 0:
        return int(nearest)
    return nearest


@dataclass(frozen=True)
class SwapTrace:
    """A swap workload: n tracked positions, (t1, t2) transpositions with
    t2 < t1 (0-based), and the values initially stored at each position."""

    n: int
    swaps: tuple[tuple[int, int], ...]
    initial_values: np.ndarray

    def __post_init__(self):
        swaps = tuple((int(a), int(b)) for a, b in self.swaps)
        for t1, t2 in swaps:
            if not 0 <= t2 < t1 < self.n:
                raise ValueError(f"swap ({t1}, {t2}) must satisfy 0 <= t2 < t1 < n={self.n}")
        values = np.asarray(self.initial_values, dtype=np.float64)
        if values.shape[0] != self.n:
            raise ValueError("initial_values must have one row per position")
        object.__setattr__(self, "swaps", swaps)
        object.__setattr__(self, "initial_values", values)


def identity_values(n: int) -> np.ndarray:
    """One-hot value rows: integer arithmetic keeps every read bit-exact."""
    return np.eye(n)


def random_trace(n: int, num_swaps: int, rng: Rng, values: np.ndarray | None = None) -> SwapTrace:
    swaps = []
    for _ in range(num_swaps):
        t2 = int(rng.integers(0, n - 1))
        t1 = int(rng.integers(t2 + 1, n))
        swaps.append((t1, t2))
    vals = identity_values(n) if values is None else values
    return SwapTrace(n=n, swaps=tuple(swaps), initial_values=vals)


def permutation_oracle(n: int, swaps) -> list[np.ndarray]:
    """Ground truth by direct simulation: the element at each position after
    every prefix of swaps (index 0 is the identity arrangement)."""
    perm = np.arange(n)
    out = [perm.copy()]
    for t1, t2 in swaps:
        if not 0 <= t2 < t1 < n:
            raise ValueError(f"swap ({t1}, {t2}) out of range for n={n}")
        perm[t1], perm[t2] = perm[t2], perm[t1]
        out.append(perm.copy())
    return out


def encode_swaps(ensemble: KeyEnsemble, trace: SwapTrace) -> SequenceBatch:
    """The write sequence: n initial (k_i, v_i) pairs, then one
    (k_t1 - k_t2, 0) pair per swap.  w = k; queries are issued separately."""
    if trace.n != ensemble.n:
        raise ValueError("trace and ensemble disagree on n")
    keys = ensemble.keys
    swap_keys = np.asarray([keys[t1] - keys[t2] for t1, t2 in trace.swaps]).reshape(
        len(trace.swaps), ensemble.d
    )
    k = np.vstack([keys, swap_keys])
    v = np.vstack([trace.initial_values, np.zeros((len(trace.swaps), trace.initial_values.shape[1]))])
    return SequenceBatch(q=k, k=k, v=v)


@dataclass(frozen=True)
class ReadRecord:
    step: int  # number of swaps applied when the read was issued
    read_index: int  # queried position
    value: np.ndarray  # recalled vector
    expected_element: int  # oracle: element at that position
    correct: bool  # nearest initial value row matches the oracle


@dataclass(frozen=True)
class TrackingResult:
    records: tuple[ReadRecord, ...]
    cache_peak: int  # longest KU cache used at any point

    @property
    def accuracy(self) -> float:
        if not self.records:
            return 1.0
        return sum(r.correct for r in self.records) / len(self.records)

    def values_matrix(self) -> np.ndarray:
        return np.asarray([r.value for r in self.records])


def _tracking_config(kernel, epsilon: float) -> DeltaFormerConfig:
    if kernel == "round_f":
        fn = lambda dots: round_f(dots, epsilon)  # noqa: E731
        return DeltaFormerConfig(kappa1=KernelSpec("round", round_decimals=0),
                                 kappa2=KernelSpec("round", round_decimals=0),
                                 scaled=False, kappa1_fn=fn)
    if isinstance(kernel, KernelSpec):
        return DeltaFormerConfig(kappa1=kernel, kappa2=kernel, scaled=False)
    if kernel == "linear":
        return DeltaFormerConfig(kappa1=KernelSpec("linear"), kappa2=KernelSpec("linear"),
                                 scaled=False)
    raise ValueError(f"unknown tracking kernel {kernel!r}")


def _read_similarity(cfg: DeltaFormerConfig, dots: np.ndarray, d: int) -> np.ndarray:
    if cfg.kappa1_fn is not None:
        return cfg.kappa1_fn(dots)
    return kernel_on_dots(cfg.kappa2, dots, d)


def run_tracking(
    ensemble: KeyEnsemble,
    trace: SwapTrace,
    reads: str | tuple = "first",
    read_all_every: int | None = None,
    kernel="round_f",
) -> TrackingResult:
    """Replay the swap trace, reading after every swap.

    reads: "first" queries position 0; "cases" queries t1, t2, and an
    uninvolved control position; "all" queries every position; a tuple
    queries those positions.  read_all_every=m compacts the cache every m
    swaps by reading out all n values and rewriting them as fresh pairs.
    kernel: "round_f" (guarded lattice rounding), "linear", or a KernelSpec.
    """
    cfg = _tracking_config(kernel, ensemble.epsilon)
    perms = permutation_oracle(trace.n, trace.swaps)
    n, d = trace.n, ensemble.d
    keys = ensemble.keys
    records: list[ReadRecord] = []
    cache_peak = n

    def read(k_cache, u_cache, position, step):
        dots = k_cache @ keys[position]
        o = _read_similarity(cfg, dots, d) @ u_cache
        expected = int(perms[step][position])
        dist = np.linalg.norm(trace.initial_values - o, axis=1)
        correct = bool(np.argmin(dist) == expected)
        return ReadRecord(step, position, o, expected, correct)

    def targets_for(t1, t2):
        if reads == "first":
            return [0]
        if reads == "cases":
            if t1 is None:
                return list(range(n))
            control = next(i for i in range(n) if i not in (t1, t2))
            return [t1, t2, control]
        if reads == "all":
            return list(range(n))
        return list(reads)

    swaps = list(trace.swaps)
    if not swaps:
        batch = encode_swaps(ensemble, trace)
        u = compute_u_naive(cfg, batch)
        for pos in range(n) if reads in ("all", "cases") else targets_for(None, None):
            records.append(read(batch.k, u, pos, 0))
        return TrackingResult(records=tuple(records), cache_peak=n)

    offset = 0
    current_values = trace.initial_values
    while offset < len(swaps):
        block = swaps[offset : offset + read_all_every] if read_all_every else swaps[offset:]
        seg_trace = SwapTrace(n=n, swaps=tuple(block), initial_values=current_values)
        batch = encode_swaps(ensemble, seg_trace)
        u = compute_u_naive(cfg, batch)
        k_all = batch.k
        cache_peak = max(cache_peak, n + len(block))
        for local, (t1, t2) in enumerate(block):
            step = offset + local + 1
            plen = n + local + 1
            for pos in targets_for(t1, t2):
                records.append(read(k_all[:plen], u[:plen], pos, step))
        offset += len(block)
        if offset >= len(swaps):
            break
        # compaction: read out all n values and rewrite them as a fresh cache
        plen = n + len(block)
        current_values = np.asarray(
            [_read_similarity(cfg, k_all[:plen] @ keys[r], d) @ u[:plen] for r in range(n)]
        )
    return TrackingResult(records=tuple(records), cache_peak=cache_peak)


def save_trace(path, trace: SwapTrace, d: int, seed: int):
    """Line format: header "n d seed", then one "t1 t2" pair per line."""
    with open(path, "w") as fh:
        fh.write(f"{trace.n} {d} {seed}\n")
        for t1, t2 in trace.swaps:
            fh.write(f"{t1} {t2}\n")


def load_trace(path) -> tuple[int, int, int, tuple[tuple[int, int], ...]]:
    with open(path) as fh:
        header = fh.readline().split()
        n, d, seed = int(header[0]), int(header[1]), int(header[2])
        swaps = []
        for line in fh:
            if line.strip():
                t1, t2 = line.split()
                swaps.append((int(t1), int(t2)))
    return n, d, seed, tuple(swaps)


def results_csv(result: TrackingResult) -> str:
    buf = io.StringIO()
    buf.write("step,read_index,correct\n")
    for rec in result.records:
        buf.write(f"{rec.step},{rec.read_index},{int(rec.correct)}\n")
    return buf.getvalue()
