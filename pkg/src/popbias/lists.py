"""Ranked recommendation lists shared by the model, re-rankers and metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

ORIGINS = ("base", "binary_xquad", "smooth_xquad", "lt_reg_model")


@dataclass(frozen=True)
class RankedList:
    """Items for one user in emission order, each with the score it was ranked by."""

    user: int
    entries: tuple[tuple[int, float], ...]
    origin: str = "base"

    def __post_init__(self):
        items = [i for i, _ in self.entries]
        if len(set(items)) != len(items):
            raise ValueError(f"duplicate items in list for user {self.user}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @classmethod
    def from_arrays(
        cls, user: int, items: Iterable[int], scores: Iterable[float], origin: str = "base"
    ) -> RankedList:
        return cls(int(user), tuple((int(i), float(s)) for i, s in zip(items, scores)), origin)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def items(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.entries], dtype=np.float64)

    def head(self, n: int) -> RankedList:
        return RankedList(self.user, self.entries[:n], self.origin)
