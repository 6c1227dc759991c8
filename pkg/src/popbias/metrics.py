"""Popularity-bias and accuracy metrics over batches of recommendation lists."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import InteractionDataset, PopularityPartition
from .lists import RankedList


@dataclass(frozen=True)
class RecommendationBatch:
    """One list per user, plus the set of test users the lists were made for."""

    lists: Mapping[int, RankedList]
    test_users: frozenset[int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.test_users is None:
            object.__setattr__(self, "test_users", frozenset(self.lists))
        extra = set(self.lists) - set(self.test_users)
        if extra:
            raise ValueError(f"lists for users outside the test set: {sorted(extra)[:5]}")

    def __len__(self) -> int:
        return len(self.lists)

    @property
    def list_length(self) -> int | None:
        """Common list length N, or None when lengths differ."""
        lengths = {len(lst) for lst in self.lists.values()}
        return lengths.pop() if len(lengths) == 1 else None


@dataclass(frozen=True)
class RelevanceJudgments:
    relevant: Mapping[int, frozenset[int]]
    tau: float = 4.0

    @classmethod
    def from_test(cls, test: InteractionDataset, tau: float = 4.0) -> RelevanceJudgments:
        """Held-out items rated at least ``tau``, grouped by user."""
        rel: dict[int, set[int]] = {}
        for u, i, r in zip(test.users.tolist(), test.items.tolist(), test.ratings.tolist()):
            if r >= tau:
                rel.setdefault(u, set()).add(i)
        return cls({u: frozenset(s) for u, s in rel.items()}, tau)


def _require_nonempty(batch: RecommendationBatch) -> None:
    if len(batch) == 0:
        raise ValueError("batch is empty")
    if any(len(lst) == 0 for lst in batch.lists.values()):
        raise ValueError("batch contains an empty list")


def ilbu(ranked: RankedList, partition: PopularityPartition) -> float:
    """Intra-list binary unfairness: share of ordered item pairs from the same segment."""
    n = len(ranked)
    if n < 2:
        raise ValueError("ILBU needs at least two items")
    n_tail = int(partition.tail_mask[ranked.items].sum())
    n_head = n - n_tail
    # ordered same-segment pairs: a(a-1) + b(b-1)
    return (n_head * (n_head - 1) + n_tail * (n_tail - 1)) / (n * (n - 1))


def arp(batch: RecommendationBatch, phi: Sequence[float] | np.ndarray | Mapping[int, float]) -> float:
    """Average recommendation popularity."""
    _require_nonempty(batch)
    per_user = [sum(phi[i] for i in lst.items) / len(lst) for lst in batch.lists.values()]
    return float(sum(per_user) / len(per_user))


def aplt(batch: RecommendationBatch, partition: PopularityPartition) -> float:
    """Average fraction of long-tail items per list."""
    _require_nonempty(batch)
    tail = partition.tail_mask
    per_user = [int(tail[lst.items].sum()) / len(lst) for lst in batch.lists.values()]
    return float(sum(per_user) / len(per_user))


def aclt(batch: RecommendationBatch, partition: PopularityPartition) -> float:
    """Average number of long-tail items per list."""
    _require_nonempty(batch)
    tail = partition.tail_mask
    return float(sum(int(tail[lst.items].sum()) for lst in batch.lists.values()) / len(batch))


def distinct_long_tail_coverage(batch: RecommendationBatch, partition: PopularityPartition) -> tuple[int, float]:
    """Distinct long-tail items recommended to anyone, as a count and as a share of the tail."""
    _require_nonempty(batch)
    covered = set()
    for lst in batch.lists.values():
        covered.update(i for i in lst.items if partition.is_tail(i))
    n_tail = len(partition.long_tail)
    return len(covered), (len(covered) / n_tail if n_tail else 0.0)


def ndcg(batch: RecommendationBatch, judgments: RelevanceJudgments, n: int) -> float:
    """Binary-gain NDCG@n averaged over listed users that have relevant test items.

    Returns NaN when no listed user has a relevant item.
    """
    _require_nonempty(batch)
    if n < 1 or any(len(lst) < n for lst in batch.lists.values()):
        raise ValueError(f"cutoff {n} exceeds a list length")
    discounts = 1.0 / np.log2(np.arange(2, n + 2))
    values = []
    for u, lst in batch.lists.items():
        relevant = judgments.relevant.get(u)
        if not relevant:
            continue
        gains = np.array([i in relevant for i in lst.items[:n]], dtype=np.float64)
        dcg = float(gains @ discounts)
        idcg = float(discounts[: min(n, len(relevant))].sum())
        values.append(dcg / idcg)
    if not values:
        return math.nan
    return float(sum(values) / len(values))
