"""Similarity kernels, their closed-form inverse retrieval SNR, and a
Monte-Carlo estimator that verifies the closed forms.

The inverse SNR of a kernel k on a store of N Gaussian key-value pairs is
N * E[k^2(noise_key, probe)] / k^2(probe, probe).  Closed forms exist for the
linear, exponential, ReLU, and SoLU kernels; the Monte-Carlo estimator
samples that ratio directly.  The probe key is drawn uniformly on the sphere
of radius sqrt(d_k) — the typical norm of a Gaussian key, and exactly the
concentration step the closed forms take — while noise keys are i.i.d.
standard Gaussian.  A slower estimator that samples values and measures the
recall error directly is available via method="recall" for cross-validation.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .numerics import Rng

__all__ = [
    "KernelSpec",
    "SnrEstimate",
    "kernel_eval",
    "kernel_on_dots",
    "snr_closed_form",
    "snr_monte_carlo",
    "snr_monte_carlo_shared",
    "capacity_curve",
    "capacity_curve_csv",
]

KINDS = ("linear", "exp", "relu", "solu", "round", "softmax_row")
CLOSED_FORM_KINDS = ("linear", "exp", "relu", "solu")


@dataclass(frozen=True)
class KernelSpec:
    """A similarity function choice with its parameters.

    tau applies to the exp and solu kinds; None means sqrt(d_k) at the
    evaluation site.  round_decimals applies to the round kind: dot products
    are snapped to the nearest multiple of 10^-round_decimals.
    """

    kind: str
    tau: float | None = None
    round_decimals: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KINDS}")
        if self.tau is not None and self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def tau_for(self, d_k: int) -> float:
        return math.sqrt(d_k) if self.tau is None else self.tau

    def with_tau(self, tau: float) -> "KernelSpec":
        return replace(self, tau=tau)


@dataclass(frozen=True)
class SnrEstimate:
    """Monte-Carlo inverse SNR with its standard error."""

    inverse_snr: float
    stderr: float
    trials: int


def kernel_on_dots(spec: KernelSpec, dots: np.ndarray, d_k: int) -> np.ndarray:
    """Apply the kernel nonlinearity to precomputed dot products."""
    dots = np.asarray(dots, dtype=np.float64)
    if spec.kind == "linear":
        return dots
    if spec.kind == "exp":
        return np.exp(dots / spec.tau_for(d_k))
    if spec.kind == "relu":
        return np.maximum(dots, 0.0)
    if spec.kind == "solu":
        return dots * np.exp(dots / spec.tau_for(d_k))
    if spec.kind == "round":
        return np.round(dots, spec.round_decimals)
    raise ValueError(f"kernel kind {spec.kind!r} is not a pairwise kernel")


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate the kernel on a single vector pair."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length vectors, got {x.shape} and {y.shape}")
    return float(kernel_on_dots(spec, np.dot(x, y), x.size))


def snr_closed_form(spec: KernelSpec, n: int, d_k: int) -> float:
    """Closed-form inverse SNR for N stored pairs with d_k-dimensional keys.

    linear: N / d_k; relu: N / (2 d_k); exp: N / exp(2 (tau-1)/tau^2 * d_k);
    solu (general tau): N (1 + 4 d_k / tau^2) / d_k * exp(-2 d_k (tau-1)/tau^2),
    which at tau = sqrt(d_k) specializes to (5N/d_k) exp(-2 (sqrt(d_k) - 1)) —
    the 5 is (1 + 4 d_k/d_k).
    """
    if n < 1 or d_k < 1:
        raise ValueError(f"n and d_k must be >= 1, got n={n}, d_k={d_k}")
    if spec.kind == "linear":
        return n / d_k
    if spec.kind == "relu":
        return n / (2.0 * d_k)
    tau = spec.tau_for(d_k)
    if spec.kind == "exp":
        return n / math.exp(2.0 * (tau - 1.0) / tau**2 * d_k)
    if spec.kind == "solu":
        return n * (1.0 + 4.0 * d_k / tau**2) / d_k * math.exp(-2.0 * d_k * (tau - 1.0) / tau**2)
    raise ValueError(f"no closed-form inverse SNR for kernel kind {spec.kind!r}")


def _squared_kernel_ratio(spec: KernelSpec, dots: np.ndarray, d_k: int) -> np.ndarray:
    """k^2(dots)/k^2(d_k) with the exponential part folded into one exp call,
    so small tau cannot overflow the numerator or denominator separately."""
    if spec.kind == "exp":
        return np.exp((dots - d_k) * (2.0 / spec.tau_for(d_k)))
    if spec.kind == "solu":
        return (dots / d_k) ** 2 * np.exp((dots - d_k) * (2.0 / spec.tau_for(d_k)))
    num = kernel_on_dots(spec, dots, d_k) ** 2
    den = float(kernel_on_dots(spec, np.float64(d_k), d_k)) ** 2
    return num / den


def _ratio_trials(spec: KernelSpec, n: int, d_k: int, trials: int, rng: Rng) -> np.ndarray:
    """Per-trial values of N * mean_j[k^2(k_j, probe)] / k^2(probe, probe)."""
    out = np.empty(trials)
    done = 0
    # Chunk the trials so the (chunk, n-1, d_k) noise block stays in memory.
    chunk = max(1, min(trials, int(8e6 / max(1, (n - 1) * d_k))))
    while done < trials:
        m = min(chunk, trials - done)
        probe = rng.normal((m, d_k))
        probe *= math.sqrt(d_k) / np.linalg.norm(probe, axis=1, keepdims=True)
        noise = rng.normal((m, n - 1, d_k))
        dots = np.einsum("mjd,md->mj", noise, probe)
        ratios = _squared_kernel_ratio(spec, dots, d_k)
        out[done : done + m] = n * ratios.mean(axis=1)
        done += m
    return out


def _recall_trials(spec: KernelSpec, n: int, d_k: int, trials: int, rng: Rng) -> np.ndarray:
    """Per-trial ||r||^2 / (c^2 ||v||^2) from a full recall simulation."""
    out = np.empty(trials)
    for t in range(trials):
        keys = rng.normal((n, d_k))
        values = rng.normal((n, d_k))
        probe = keys[0]
        weights = kernel_on_dots(spec, keys[1:] @ probe, d_k)
        r = weights @ values[1:]
        c = float(kernel_on_dots(spec, probe @ probe, d_k))
        out[t] = float(r @ r) / (c * c * float(values[0] @ values[0]))
    return out


def snr_monte_carlo_shared(
    specs: list[KernelSpec],
    n: int,
    d_k: int,
    trials: int,
    rng: Rng,
) -> list[SnrEstimate]:
    """Ratio estimates for several kernels on one shared key-draw pass.

    Sampling the keys once and evaluating every kernel on the same dot
    products costs a single pass and makes cross-kernel comparisons paired.
    """
    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    if n == 1:
        return [SnrEstimate(0.0, 0.0, trials) for _ in specs]
    samples = [np.empty(trials) for _ in specs]
    done = 0
    chunk = max(1, min(trials, int(8e6 / max(1, (n - 1) * d_k))))
    while done < trials:
        m = min(chunk, trials - done)
        probe = rng.normal((m, d_k))
        probe *= math.sqrt(d_k) / np.linalg.norm(probe, axis=1, keepdims=True)
        noise = rng.normal((m, n - 1, d_k))
        dots = np.einsum("mjd,md->mj", noise, probe)
        for spec, out in zip(specs, samples):
            out[done : done + m] = n * _squared_kernel_ratio(spec, dots, d_k).mean(axis=1)
        done += m
    return [
        SnrEstimate(float(s.mean()), float(s.std(ddof=1) / math.sqrt(trials)), trials)
        for s in samples
    ]


def snr_monte_carlo(
    spec: KernelSpec,
    n: int,
    d_k: int,
    trials: int,
    rng: Rng,
    method: str = "ratio",
) -> SnrEstimate:
    """Monte-Carlo inverse SNR over `trials` independent key draws.

    method="ratio" (default) estimates the kernel-ratio form directly and has
    low variance; method="recall" samples values too and measures the recall
    residual per the definition (slow, heavy-tailed; for cross-validation).
    """
    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n == 1:
        return SnrEstimate(0.0, 0.0, trials)
    if method == "ratio":
        samples = _ratio_trials(spec, n, d_k, trials, rng)
    elif method == "recall":
        samples = _recall_trials(spec, n, d_k, trials, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(trials))
    return SnrEstimate(mean, stderr, trials)


def capacity_curve(
    spec: KernelSpec,
    d_k: int,
    n_values: list[int],
    trials: int,
    rng: Rng,
) -> list[dict]:
    """One row per store size n: closed form (when defined) next to the
    Monte-Carlo estimate."""
    if not n_values:
        raise ValueError("n_values must be nonempty")
    rows = []
    for i, n in enumerate(n_values):
        try:
            closed = snr_closed_form(spec, n, d_k)
        except ValueError:
            closed = None
        est = snr_monte_carlo(spec, n, d_k, trials, rng.split(i))
        rows.append(
            {
                "n": n,
                "closed_form": closed,
                "mc_mean": est.inverse_snr,
                "mc_stderr": est.stderr,
            }
        )
    return rows


def capacity_curve_csv(rows: list[dict]) -> str:
    """Serialize capacity_curve rows; closed_form is empty when undefined."""
    buf = io.StringIO()
    buf.write("n,closed_form,mc_mean,mc_stderr\n")
    for row in rows:
        closed = "" if row["closed_form"] is None else repr(row["closed_form"])
        buf.write(f"{row['n']},{closed},{row['mc_mean']!r},{row['mc_stderr']!r}\n")
    return buf.getvalue()
