"""Rank statistics used by the evaluation harness."""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, DegenerateInputError


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # ties share the mean rank
        i = j + 1
    return ranks


def spearman_rank_correlation(a, b) -> float:
    """Spearman's rho with average ranks for ties; in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) != len(b):
        raise ArgumentError("need two equal-length 1-D sequences")
    if len(a) < 3:
        raise ArgumentError("need at least three observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateInputError("rank correlation undefined for constant input")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra @ rb) / np.sqrt((ra @ ra) * (rb @ rb)))
