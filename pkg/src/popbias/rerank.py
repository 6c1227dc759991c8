"""Greedy xQuAD re-ranking over the short-head / long-tail aspect pair."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Mapping

import numpy as np

from .data import PopularityPartition
from .lists import RankedList

VARIANTS = ("binary", "smooth")
MODES = ("additive", "convex")


@dataclass(frozen=True)
class CategoryPrior:
    """How much a user cares about each popularity segment."""

    p_head: float
    p_tail: float

    def __post_init__(self):
        if not (0.0 <= self.p_head <= 1.0 and 0.0 <= self.p_tail <= 1.0):
            raise ValueError("prior probabilities must lie in [0, 1]")
        if abs(self.p_head + self.p_tail - 1.0) > 1e-12:
            raise ValueError("prior probabilities must sum to 1")


def category_prior(
    user_train_items: Collection[int], partition: PopularityPartition, smoothing: float = 0.0
) -> CategoryPrior:
    """Share of the user's profile that falls in the long tail, optionally Laplace-smoothed."""
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    items = list(user_train_items)
    if not items and smoothing == 0:
        raise ValueError("empty profile needs smoothing > 0")
    n_tail = sum(partition.is_tail(i) for i in items)
    p_tail = (n_tail + smoothing) / (len(items) + 2 * smoothing)
    return CategoryPrior(1.0 - p_tail, p_tail)


def minmax_normalize(ranked: RankedList) -> RankedList:
    """Rescale scores to [0, 1] within the list; a constant list maps to all ones."""
    scores = ranked.scores
    if len(scores) == 0:
        return ranked
    lo, hi = scores.min(), scores.max()
    norm = np.ones_like(scores) if hi == lo else (scores - lo) / (hi - lo)
    return RankedList.from_arrays(ranked.user, ranked.items, norm, ranked.origin)


def xquad_rerank(
    candidates: RankedList,
    partition: PopularityPartition,
    prior: CategoryPrior,
    lam: float,
    variant: str = "binary",
    n: int = 10,
    mode: str = "additive",
) -> RankedList:
    """Build a length-``n`` list greedily from ``candidates``.

    Each round appends the remaining item ``v`` maximizing

        P(v|u) + lam * sum_c P(c|u) * [v in c] * (1 - coverage(c, S))

    where ``P(v|u)`` is the candidate score (expected in [0, 1]) and coverage
    is 0/1 for the binary variant or the fraction of ``S`` already in ``c``
    for the smooth one. ``mode="convex"`` uses ``(1 - lam) * P(v|u) + lam * ...``
    instead. Ties go to the higher candidate score, then the lower item index.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if mode == "convex" and lam > 1:
        raise ValueError("convex mode needs lambda in [0, 1]")
    m = len(candidates)
    if n < 1 or n > m:
        raise ValueError(f"cannot select {n} items from {m} candidates")

    items = np.array(candidates.items, dtype=np.int64)
    base = candidates.scores
    if base.min() < 0.0 or base.max() > 1.0:
        raise ValueError("candidate scores must be normalized to [0, 1]")
    is_tail = partition.tail_mask[items]
    aspect_weight = np.where(is_tail, prior.p_tail, prior.p_head)
    relevance = base if mode == "additive" else (1.0 - lam) * base

    remaining = np.ones(m, dtype=bool)
    chosen: list[int] = []
    n_tail = 0
    for step in range(n):
        if step == 0:
            uncovered_head = uncovered_tail = 1.0
        elif variant == "binary":
            uncovered_head = 0.0 if n_tail < step else 1.0
            uncovered_tail = 0.0 if n_tail > 0 else 1.0
        else:
            uncovered_tail = 1.0 - n_tail / step
            uncovered_head = 1.0 - (step - n_tail) / step
        uncovered = np.where(is_tail, uncovered_tail, uncovered_head)
        objective = relevance + lam * aspect_weight * uncovered

        idx = np.flatnonzero(remaining)
        order = np.lexsort((items[idx], -base[idx], -objective[idx]))
        pick = int(idx[order[0]])
        chosen.append(pick)
        remaining[pick] = False
        n_tail += int(is_tail[pick])

    origin = "binary_xquad" if variant == "binary" else "smooth_xquad"
    return RankedList.from_arrays(candidates.user, items[chosen], base[chosen], origin)


def rerank_users(
    candidates: Mapping[int, RankedList],
    partition: PopularityPartition,
    priors: Mapping[int, CategoryPrior],
    lam: float,
    variant: str,
    n: int,
    mode: str = "additive",
) -> dict[int, RankedList]:
    """Normalize each user's candidates and re-rank them."""
    return {
        u: xquad_rerank(minmax_normalize(cands), partition, priors[u], lam, variant, n, mode)
        for u, cands in candidates.items()
    }
