"""Toy task generators: element-swap tracking and DAG reachability.

Swap samples tokenize each transposition of n elements as one symbol from
the C(n,2) unordered pairs; the label after every swap is the element
sitting at position 0.  DAG samples place n nodes as two disjoint random
trees of n/2 nodes each (so the reachable/unreachable classes are balanced
by construction); each node's token encodes its parent position, and the
label says whether the node belongs to the tree rooted at position 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .numerics import Rng
from .state_tracking import permutation_oracle

__all__ = [
    "SwapSample",
    "DagSample",
    "swap_vocab",
    "gen_swap",
    "gen_dag",
    "reachability_closure",
    "adjacency_from_tokens",
    "dump_samples",
]


@dataclass(frozen=True)
class SwapSample:
    """input_ids over the C(n,2) swap-pair vocabulary; labels over n."""

    input_ids: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.input_ids) != len(self.labels):
            raise ValueError("input_ids and labels must have equal length")


@dataclass(frozen=True)
class DagSample:
    """node_tokens encode each position's parent (n = root sentinel);
    labels flag membership of the tree rooted at position 0."""

    node_tokens: np.ndarray
    labels: np.ndarray


def swap_vocab(n: int) -> list[tuple[int, int]]:
    """Token id -> (t1, t2) pair with t2 < t1, in a fixed enumeration order."""
    return [(i, j) for j, i in itertools.combinations(range(n), 2)]


def gen_swap(n: int, seq_len: int, batch: int, rng: Rng) -> list[SwapSample]:
    """Uniform i.i.d. swap tokens; labels by replaying the permutation."""
    if n < 2:
        raise ValueError("need at least two elements to swap")
    vocab = swap_vocab(n)
    samples = []
    for _ in range(batch):
        ids = rng.integers(0, len(vocab), (seq_len,))
        perms = permutation_oracle(n, [vocab[i] for i in ids])
        labels = np.asarray([perm[0] for perm in perms[1:]], dtype=np.int64)
        samples.append(SwapSample(input_ids=np.asarray(ids, dtype=np.int64), labels=labels))
    return samples


def gen_dag(n: int, batch: int, rng: Rng) -> list[DagSample]:
    """Two random trees over n/2 positions each, interleaved uniformly.

    Every non-root position picks its parent uniformly among earlier
    positions of its own tree; the two roots carry the sentinel token n.
    Exactly n/2 labels are positive (the tree containing position 0).
    """
    if n < 4 or n % 2:
        raise ValueError("n must be even and >= 4")
    samples = []
    half = n // 2
    for _ in range(batch):
        # position 0 anchors tree A; half-1 further positions join it and
        # the remaining half form tree B
        assignment = np.ones(n, dtype=np.int64)
        assignment[0] = 0
        assignment[1 + rng.permutation(n - 1)[: half - 1]] = 0
        tokens = np.empty(n, dtype=np.int64)
        seen: dict[int, list[int]] = {0: [], 1: []}
        for pos in range(n):
            tree = int(assignment[pos])
            if not seen[tree]:
                tokens[pos] = n  # root sentinel
            else:
                prior = seen[tree]
                tokens[pos] = prior[int(rng.integers(0, len(prior)))]
            seen[tree].append(pos)
        labels = (assignment == 0).astype(np.int64)
        samples.append(DagSample(node_tokens=tokens, labels=labels))
    return samples


def reachability_closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a DAG adjacency by boolean powers.

    Also computes (I - A)^{-1} = I + A + A^2 + ... and checks its positive
    entries coincide with the boolean closure; a nonzero A^n means a cycle.
    """
    a = np.asarray(adj, dtype=bool)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    n = a.shape[0]
    closure = np.eye(n, dtype=bool)
    power = a.copy()
    for _ in range(n):
        closure |= power
        power = power @ a
    if power.any():
        raise ValueError("adjacency has a cycle (A^n is nonzero)")
    inverse = np.linalg.inv(np.eye(n) - a.astype(np.float64))
    if not np.array_equal(inverse > 0.5, closure):
        raise AssertionError("matrix-inverse sign pattern disagrees with boolean closure")
    return closure


def adjacency_from_tokens(tokens: np.ndarray) -> np.ndarray:
    """Parent-token encoding -> adjacency with edges parent -> child."""
    n = len(tokens)
    adj = np.zeros((n, n), dtype=bool)
    for child, parent in enumerate(tokens):
        if parent != n:
            adj[int(parent), child] = True
    return adj


def dump_samples(samples, path):
    """One sample per line: space-separated token ids, a tab, then labels."""
    with open(path, "w") as fh:
        for s in samples:
            ids = s.input_ids if isinstance(s, SwapSample) else s.node_tokens
            fh.write(" ".join(str(int(i)) for i in ids))
            fh.write("\t")
            fh.write(" ".join(str(int(l)) for l in s.labels))
            fh.write("\n")
