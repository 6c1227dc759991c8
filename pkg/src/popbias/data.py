"""Rating data: loading, cross-validation folds and the popularity partition."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

FORMATS = ("tsv_triples", "csv_triples", "movielens100k")
_DEFAULT_DELIMITERS = {"tsv_triples": "\t", "csv_triples": ",", "movielens100k": "\t"}

HEAD = "head"
TAIL = "tail"


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Explicit ratings as parallel index arrays over shared id vocabularies.

    ``users[k]``, ``items[k]`` and ``ratings[k]`` describe interaction ``k``.
    The vocabularies may list ids that have no interaction in this particular
    dataset (folds keep the vocabulary of the full corpus so that model
    indices stay aligned).
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    rating_scale: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        n = len(self.users)
        if len(self.items) != n or len(self.ratings) != n:
            raise DataError("users, items and ratings must have equal length")
        lo, hi = self.rating_scale
        if n and (self.ratings.min() < lo or self.ratings.max() > hi):
            raise DataError(f"ratings outside scale {self.rating_scale}")
        if n:
            keys = self.users.astype(np.int64) * max(len(self.item_ids), 1) + self.items
            if len(np.unique(keys)) != n:
                raise DataError("duplicate (user, item) pair")

    def __len__(self) -> int:
        return len(self.users)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    @property
    def interactions(self) -> list[tuple[str, str, float]]:
        return [
            (self.user_ids[u], self.item_ids[i], float(r))
            for u, i, r in zip(self.users, self.items, self.ratings)
        ]

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, float]],
        rating_scale: tuple[float, float] | None = None,
    ) -> InteractionDataset:
        """Build a dataset from ``(user_id, item_id, rating)`` triples.

        Vocabulary indices follow first appearance. A repeated (user, item)
        pair keeps the last rating.
        """
        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        cells: dict[tuple[int, int], float] = {}
        dupes = 0
        for user, item, rating in triples:
            u = user_index.setdefault(str(user), len(user_index))
            i = item_index.setdefault(str(item), len(item_index))
            if (u, i) in cells:
                dupes += 1
                del cells[(u, i)]  # re-insert so order reflects the last row
            cells[(u, i)] = float(rating)
        if dupes:
            logger.warning("resolved %d duplicate (user, item) rows, keeping the last rating", dupes)
        keys = list(cells)
        users = np.array([k[0] for k in keys], dtype=np.int64)
        items = np.array([k[1] for k in keys], dtype=np.int64)
        ratings = np.array(list(cells.values()), dtype=np.float64)
        if rating_scale is None:
            rating_scale = (float(ratings.min()), float(ratings.max())) if len(ratings) else (1.0, 5.0)
        return cls(users, items, ratings, tuple(user_index), tuple(item_index), rating_scale)

    def subset(self, index: np.ndarray) -> InteractionDataset:
        """Interactions selected by ``index``, sharing this dataset's vocabularies."""
        index = np.asarray(index)
        return InteractionDataset(
            self.users[index],
            self.items[index],
            self.ratings[index],
            self.user_ids,
            self.item_ids,
            self.rating_scale,
        )

    def item_counts(self) -> np.ndarray:
        """Number of ratings per item index (length ``n_items``)."""
        return np.bincount(self.items, minlength=self.n_items)

    def user_items(self) -> list[np.ndarray]:
        """Rated item indices per user index."""
        order = np.argsort(self.users, kind="stable")
        bounds = np.searchsorted(self.users[order], np.arange(self.n_users + 1))
        sorted_items = self.items[order]
        return [sorted_items[bounds[u] : bounds[u + 1]] for u in range(self.n_users)]


@dataclass(frozen=True, eq=False)
class FoldPair:
    train: InteractionDataset
    test: InteractionDataset
    fold_id: int


def load_interactions(
    path: str | Path,
    format: str = "tsv_triples",
    delimiter: str | None = None,
    rating_scale: tuple[float, float] | None = None,
) -> InteractionDataset:
    """Read ``user<sep>item<sep>rating[<sep>timestamp]`` rows from a UTF-8 file.

    A first line whose rating field is not numeric is treated as a header and
    skipped. Extra columns beyond the third are ignored.

    Args:
        path: file to read.
        format: one of ``tsv_triples``, ``csv_triples``, ``movielens100k``.
        delimiter: overrides the format's default separator.
        rating_scale: ``(min, max)``; inferred from the data when omitted.
            Ratings outside an explicit scale are rejected.

    Raises:
        DataError: on a malformed row (with its line number) or an empty file.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown format {format!r}; expected one of {FORMATS}")
    sep = delimiter or _DEFAULT_DELIMITERS[format]
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")

    triples = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=sep, skipinitialspace=True)
        first = True
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise DataError(f"expected at least 3 fields, got {len(row)}", line=lineno)
            user, item, raw = row[0].strip(), row[1].strip(), row[2].strip()
            try:
                rating = float(raw)
            except ValueError:
                if first:
                    first = False
                    continue
                raise DataError(f"rating {raw!r} is not a number", line=lineno) from None
            first = False
            if not user or not item:
                raise DataError("empty user or item id", line=lineno)
            if not math.isfinite(rating):
                raise DataError(f"rating {raw!r} is not finite", line=lineno)
            if rating_scale is not None and not rating_scale[0] <= rating <= rating_scale[1]:
                raise DataError(f"rating {rating} outside scale {rating_scale}", line=lineno)
            triples.append((user, item, rating))

    if not triples:
        raise DataError(f"{path} contains no interactions")
    return InteractionDataset.from_triples(triples, rating_scale=rating_scale)


def cross_validation_folds(
    data: InteractionDataset, k: int = 5, seed: int = 0, stratify_by_user: bool = False
) -> list[FoldPair]:
    """Split interactions into ``k`` train/test pairs.

    By default the interactions are shuffled globally and cut into ``k``
    near-equal test blocks. With ``stratify_by_user`` each user's ratings are
    dealt round-robin across folds instead, so every user with at least ``k``
    ratings appears in every test fold.
    """
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    n = len(data)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of interactions ({n})")

    rng = np.random.default_rng(seed)
    if stratify_by_user:
        fold_of = np.empty(n, dtype=np.int64)
        perm = rng.permutation(n)
        order = perm[np.argsort(data.users[perm], kind="stable")]
        bounds = np.searchsorted(data.users[order], np.arange(data.n_users + 1))
        offsets = rng.integers(0, k, size=data.n_users)
        for u in range(data.n_users):
            rows = order[bounds[u] : bounds[u + 1]]
            fold_of[rows] = (np.arange(len(rows)) + offsets[u]) % k
        blocks = [np.sort(np.flatnonzero(fold_of == f)) for f in range(k)]
    else:
        blocks = [np.sort(b) for b in np.array_split(rng.permutation(n), k)]

    folds = []
    for f, test_idx in enumerate(blocks):
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        folds.append(FoldPair(data.subset(np.flatnonzero(mask)), data.subset(test_idx), f))
    return folds


@dataclass(frozen=True, eq=False)
class PopularityPartition:
    """Short-head / long-tail split of the item catalog.

    ``phi`` holds one popularity value per item index (rating counts when
    built from data). ``short_head`` and ``long_tail`` partition all item
    indices ``0 .. len(phi) - 1``.
    """

    phi: np.ndarray
    short_head: frozenset[int]
    long_tail: frozenset[int]
    head_ratio: float = 0.8

    def __post_init__(self):
        if self.short_head & self.long_tail:
            raise ConfigError("short head and long tail overlap")
        if len(self.short_head) + len(self.long_tail) != len(self.phi):
            raise ConfigError("partition must cover every item exactly once")

    @property
    def n_items(self) -> int:
        return len(self.phi)

    @cached_property
    def tail_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.phi), dtype=bool)
        mask[list(self.long_tail)] = True
        mask.flags.writeable = False
        return mask

    def is_tail(self, item: int) -> bool:
        return bool(self.tail_mask[item])

    def segment(self, item: int) -> str:
        return TAIL if self.tail_mask[item] else HEAD

    def same_segment(self, i: int, j: int) -> int:
        """Co-membership indicator d(i, j)."""
        return int(self.tail_mask[i] == self.tail_mask[j])


def partition_from_counts(phi: Sequence[float] | np.ndarray, head_ratio: float = 0.8) -> PopularityPartition:
    """Minimal most-popular prefix holding at least ``head_ratio`` of all popularity.

    Items are ordered by descending popularity, ties by ascending index. Items
    with zero popularity always land in the long tail.
    """
    if not 0.0 < head_ratio < 1.0:
        raise ConfigError(f"head_ratio must lie in (0, 1), got {head_ratio}")
    phi = np.asarray(phi)
    if phi.ndim != 1 or len(phi) == 0:
        raise DataError("popularity vector must be one-dimensional and non-empty")
    if (phi < 0).any():
        raise DataError("popularity values must be non-negative")
    total = float(phi.sum())
    if total <= 0:
        raise DataError("no item has positive popularity")

    order = np.argsort(-phi, kind="stable")
    cumulative = np.cumsum(phi[order], dtype=np.float64)
    target = head_ratio * total
    # relative slack absorbs binary representation error in head_ratio * total
    cut = int(np.searchsorted(cumulative, target * (1 - 1e-12), side="left")) + 1
    head = frozenset(int(i) for i in order[:cut] if phi[i] > 0)
    tail = frozenset(range(len(phi))) - head
    return PopularityPartition(phi.copy(), head, tail, head_ratio)


def build_popularity_partition(train: InteractionDataset, head_ratio: float = 0.8) -> PopularityPartition:
    """Partition items by their rating counts in ``train``."""
    if len(train) == 0:
        raise DataError("cannot build a partition from an empty training set")
    return partition_from_counts(train.item_counts(), head_ratio)


def write_partition_csv(partition: PopularityPartition, item_ids: Sequence[str], path: str | Path) -> None:
    """Write the two-column ``item_id,segment`` export."""
    if len(item_ids) != partition.n_items:
        raise ConfigError("item vocabulary does not match the partition size")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "segment"])
        for idx, iid in enumerate(item_ids):
            writer.writerow([iid, partition.segment(idx)])


def read_partition_csv(path: str | Path) -> dict[str, str]:
    """Read an ``item_id,segment`` file into ``{item_id: "head" | "tail"}``."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row:
                continue
            if reader.line_num == 1 and row[0].strip() == "item_id":
                continue
            if len(row) < 2 or row[1].strip() not in (HEAD, TAIL):
                raise DataError(f"expected 'item_id,head|tail', got {row!r}", line=reader.line_num)
            out[row[0].strip()] = row[1].strip()
    if not out:
        raise DataError(f"{path} contains no partition rows")
    return out


def partition_from_segments(
    item_ids: Sequence[str],
    segments: Mapping[str, str],
    phi: Sequence[float] | np.ndarray | None = None,
) -> PopularityPartition:
    """Rebuild a partition over ``item_ids`` from an exported segment map.

    Ids missing from ``segments`` are treated as long tail, in line with the
    rule for items without training ratings.
    """
    head = frozenset(k for k, iid in enumerate(item_ids) if segments.get(iid) == HEAD)
    tail = frozenset(range(len(item_ids))) - head
    phi_arr = np.zeros(len(item_ids)) if phi is None else np.asarray(phi, dtype=np.float64)
    return PopularityPartition(phi_arr, head, tail, head_ratio=float("nan"))
