"""Metrics and the Mann-Whitney U test."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInputError

EXACT_LIMIT = 400


def episodes_to_threshold(curve: Sequence[tuple[int, float]], threshold: float, budget: int | None = None) -> int:
    """First recorded episode whose evaluation return reaches ``threshold``.

    Returns ``budget + 1`` (right-censored) if it is never reached; the
    budget defaults to the last recorded episode.
    """
    if not len(curve):
        raise InvalidInputError("empty learning curve")
    for ep, ret in curve:
        if ret >= threshold:
            return int(ep)
    if budget is None:
        budget = int(curve[-1][0])
    return int(budget) + 1


def key_event_detection_rate(rewards: Sequence[np.ndarray], key_steps: Sequence[Sequence[int]]) -> float:
    """Fraction of key steps whose reward is strictly above their episode's
    mean per-step reward (correction excluded)."""
    if len(rewards) != len(key_steps):
        raise InvalidInputError("one key-step set per episode required")
    hits = total = 0
    for r, keys in zip(rewards, key_steps):
        r = np.asarray(r, dtype=float)
        mean = r.mean()
        for k in keys:
            if not 0 <= k < len(r):
                raise InvalidInputError(f"key step {k} outside episode of length {len(r)}")
            hits += bool(r[k] > mean)
            total += 1
    if total == 0:
        raise InvalidInputError("no key steps")
    return hits / total


def _rank_sum_counts(ranks2: np.ndarray, n: int) -> np.ndarray:
    """counts[s] = number of size-n subsets whose doubled rank sum is s."""
    top = int(ranks2[np.argsort(ranks2)[::-1][:n]].sum())
    counts = np.zeros((n + 1, top + 1))
    counts[0, 0] = 1.0
    for r in ranks2.astype(int):
        # iterate k downwards so each item is used at most once
        for k in range(n, 0, -1):
            counts[k, r:] += counts[k - 1, : top + 1 - r]
    return counts[n]


def mann_whitney_u(
    a: Sequence[float],
    b: Sequence[float],
    alternative: str = "two-sided",
    method: str = "auto",
) -> tuple[float, float]:
    """U statistic of ``a`` and its p-value.

    Ties get midranks.  The exact null distribution of the rank sum is
    enumerated when ``len(a) * len(b) <= 400``; otherwise a normal
    approximation with tie-corrected variance and continuity correction is
    used.  ``alternative="less"`` tests whether ``a`` tends to be smaller.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise InvalidInputError("both samples must be non-empty")
    if alternative not in ("two-sided", "less", "greater"):
        raise InvalidInputError(f"unknown alternative {alternative!r}")
    if method == "auto":
        method = "exact" if n * m <= EXACT_LIMIT else "asymptotic"
    ranks = rankdata(np.concatenate([x, y]))
    u = float(ranks[:n].sum() - n * (n + 1) / 2)
    mu = n * m / 2
    if method == "exact":
        ranks2 = np.rint(2 * ranks).astype(int)
        counts = _rank_sum_counts(ranks2, n)
        total = counts.sum()
        u_vals = np.arange(len(counts)) / 2 - n * (n + 1) / 2
        eps = 1e-9
        p_le = counts[u_vals <= u + eps].sum() / total
        p_ge = counts[u_vals >= u - eps].sum() / total
    elif method == "asymptotic":
        N = n + m
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie = float((tie_counts**3 - tie_counts).sum())
        var = n * m / 12 * ((N + 1) - tie / (N * (N - 1)))
        if var <= 0:
            return u, 1.0
        sd = math.sqrt(var)
        p_le = 0.5 * math.erfc(-((u - mu + 0.5) / sd) / math.sqrt(2))
        p_ge = 0.5 * math.erfc(((u - mu - 0.5) / sd) / math.sqrt(2))
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    if alternative == "less":
        p = p_le
    elif alternative == "greater":
        p = p_ge
    else:
        p = 2 * min(p_le, p_ge)
    return u, float(min(1.0, p))


# the same test under its other name
wilcoxon_rank_sum = mann_whitney_u
