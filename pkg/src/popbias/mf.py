"""Pairwise learning-to-rank matrix factorization with an optional long-tail regularizer.

The ranker scores ``s_ui = P[u] . Q[i]`` and is trained by minibatch SGD on
sampled ordered pairs ``(u, i, j)`` with ``r_ui > r_uj``, minimizing the
squared hinge ``max(0, margin - (s_ui - s_uj))**2`` plus L2 weight decay.
A share of pairs (``unrated_pair_share``) draws ``j`` from the whole catalog,
where an unrated item counts as one step below the rating scale, as in
ranking-oriented ALS where missing cells are zeros.

LT-Reg adds ``lambda_reg * sum_u reg_u``. For user ``u`` and a pool ``C`` of
``m`` items (by default the user's current top-``m`` items, refreshed every
epoch), with weights ``w_k = sigmoid(s_uk)``:

    ratio form (default):  reg_u = sum_{k!=l} d(k,l) w_k w_l / sum_{k!=l} w_k w_l
    mean form:             reg_u = sum_{k!=l} d(k,l) w_k w_l / (m (m - 1))

``d(k, l)`` is 1 when both items sit in the same popularity segment. The
ratio form is a soft intra-list binary unfairness and only drops when score
mass moves toward the under-represented segment. The mean form can also be
lowered by pushing every score down.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import InteractionDataset, PopularityPartition
from .errors import ConfigError, DataError, TrainingDivergence
from .lists import RankedList

logger = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e6
REG_FORMS = ("ratio", "mean")
REG_POOLS = ("top", "stratified")


@dataclass(frozen=True)
class TrainConfig:
    f: int = 50
    epochs: int = 30
    learn_rate: float = 0.02
    l2_weight: float = 0.01
    lambda_reg: float = 0.0
    pair_samples_per_epoch: int = 100_000
    seed: int = 0
    batch_size: int = 512
    margin: float = 1.0
    # share of pairs whose second item is drawn from the whole catalog
    unrated_pair_share: float = 0.5
    # regularizer pool: the user's current top items, or a head/tail split sample
    reg_pool_size: int = 10
    reg_pool: str = "top"
    reg_form: str = "ratio"

    def __post_init__(self):
        checks = [
            (self.f >= 1, "f must be positive"),
            (self.epochs >= 1, "epochs must be positive"),
            (self.learn_rate > 0, "learn_rate must be > 0"),
            (self.l2_weight >= 0, "l2_weight must be >= 0"),
            (self.lambda_reg >= 0, "lambda_reg must be >= 0"),
            (self.pair_samples_per_epoch >= 1, "pair_samples_per_epoch must be positive"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.margin > 0, "margin must be > 0"),
            (0.0 <= self.unrated_pair_share <= 1.0, "unrated_pair_share must lie in [0, 1]"),
            (self.reg_pool_size >= 2, "reg_pool_size must be at least 2"),
            (self.reg_pool in REG_POOLS, f"reg_pool must be one of {REG_POOLS}"),
            (self.reg_form in REG_FORMS, f"reg_form must be one of {REG_FORMS}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def with_lambda(self, lam: float) -> TrainConfig:
        return replace(self, lambda_reg=float(lam))


@dataclass(eq=False)
class FactorModel:
    P: np.ndarray
    Q: np.ndarray
    trained_with: str = "base"
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()
    loss_history: list[float] = field(default_factory=list)

    @property
    def f(self) -> int:
        return self.Q.shape[1]

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    def user_scores(self, u: int) -> np.ndarray:
        self._check_user(u)
        return self.Q @ self.P[u]

    def _check_user(self, u: int) -> None:
        if not 0 <= u < self.n_users:
            raise IndexError(f"user index {u} out of range [0, {self.n_users})")

    def save(self, path: str | Path) -> None:
        """Write factors and vocabularies to an ``.npz`` archive."""
        with open(path, "wb") as fh:
            np.savez(
                fh,
                P=self.P,
                Q=self.Q,
                trained_with=np.array(self.trained_with),
                user_ids=np.array(self.user_ids, dtype=str),
                item_ids=np.array(self.item_ids, dtype=str),
                loss_history=np.array(self.loss_history, dtype=np.float64),
            )

    @classmethod
    def load(cls, path: str | Path) -> FactorModel:
        with np.load(path, allow_pickle=False) as z:
            return cls(
                P=z["P"],
                Q=z["Q"],
                trained_with=str(z["trained_with"]),
                user_ids=tuple(str(s) for s in z["user_ids"]),
                item_ids=tuple(str(s) for s in z["item_ids"]),
                loss_history=[float(x) for x in z["loss_history"]],
            )


def predict_score(model: FactorModel, u: int, i: int) -> float:
    model._check_user(u)
    if not 0 <= i < model.n_items:
        raise IndexError(f"item index {i} out of range [0, {model.n_items})")
    return float(model.P[u] @ model.Q[i])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- objective pieces -------------------------------------------------------


def pairwise_hinge_terms(Pu, Qi, Qj, margin):
    """Per-pair squared hinge values and the derivative w.r.t. the score gap."""
    gap = np.einsum("bf,bf->b", Pu, Qi - Qj)
    h = np.maximum(0.0, margin - gap)
    return h * h, -2.0 * h


def longtail_penalty_terms(Pu, Qpool, same):
    """Per-user regularizer values and their derivatives w.r.t. pool scores.

    ``Pu`` is ``(B, f)``, ``Qpool`` is ``(B, m, f)`` and ``same`` is the
    ``(B, m, m)`` co-membership mask with a zero diagonal.
    """
    m = Qpool.shape[1]
    norm = 1.0 / (m * (m - 1))
    sg = _sigmoid(np.einsum("bf,bmf->bm", Pu, Qpool))
    weighted = np.einsum("bkl,bl->bk", same, sg)
    values = norm * np.einsum("bk,bk->b", sg, weighted)
    dscore = 2.0 * norm * sg * (1.0 - sg) * weighted
    return values, dscore


def soft_ilbu_terms(Pu, Qpool, same):
    """Ratio form: same-segment pair mass over all pair mass, sigmoid scores as weights.

    The ratio is invariant to rescaling every weight, so weights are divided by
    their per-user maximum in log space to avoid underflow.
    """
    m = Qpool.shape[1]
    s = np.einsum("bf,bmf->bm", Pu, Qpool)
    log_sg = -np.logaddexp(0.0, -s)
    w = np.exp(log_sg - log_sg.max(axis=1, keepdims=True))
    one_minus_sg = np.exp(-np.logaddexp(0.0, s))
    off = 1.0 - np.eye(m)
    same_w = np.einsum("bkl,bl->bk", same, w)
    all_w = np.einsum("kl,bl->bk", off, w)
    S = np.einsum("bk,bk->b", w, same_w)
    T = np.einsum("bk,bk->b", w, all_w)
    values = S / T
    dw = 2.0 * (same_w - values[:, None] * all_w) / T[:, None]
    return values, dw * w * one_minus_sg


def co_membership(tail_mask: np.ndarray, pools: np.ndarray) -> np.ndarray:
    seg = tail_mask[pools]
    same = (seg[:, :, None] == seg[:, None, :]).astype(np.float64)
    idx = np.arange(pools.shape[1])
    same[:, idx, idx] = 0.0
    return same


_PENALTY = {"ratio": soft_ilbu_terms, "mean": longtail_penalty_terms}


def pairwise_objective(P, Q, users, pos, neg, margin=1.0):
    """Summed squared-hinge loss over pairs and its dense gradients."""
    loss, dgap = pairwise_hinge_terms(P[users], Q[pos], Q[neg], margin)
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, users, dgap[:, None] * (Q[pos] - Q[neg]))
    np.add.at(gQ, pos, dgap[:, None] * P[users])
    np.add.at(gQ, neg, -dgap[:, None] * P[users])
    return float(loss.sum()), gP, gQ


def longtail_regularizer(P, Q, users, pools, tail_mask, form="ratio"):
    """Mean regularizer over ``users`` (each with its own pool row) and dense gradients."""
    users = np.asarray(users)
    pools = np.asarray(pools)
    same = co_membership(np.asarray(tail_mask, dtype=bool), pools)
    values, dscore = _PENALTY[form](P[users], Q[pools], same)
    B = len(users)
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, users, np.einsum("bk,bkf->bf", dscore, Q[pools]) / B)
    np.add.at(gQ, pools.ravel(), (dscore[:, :, None] * P[users][:, None, :]).reshape(-1, P.shape[1]) / B)
    return float(values.mean()), gP, gQ


# --- training ---------------------------------------------------------------


def _scatter_add(target: np.ndarray, index: np.ndarray, rows: np.ndarray) -> None:
    """``np.add.at(target, index, rows)`` via one sort and segment sums."""
    order = np.argsort(index, kind="stable")
    sorted_index = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_index[1:] != sorted_index[:-1]])
    target[sorted_index[starts]] += np.add.reduceat(rows[order], starts, axis=0)


class _PairSampler:
    """Draws ordered training pairs; unrated items sit one step below the rating scale."""

    def __init__(self, train: InteractionDataset):
        self.n_items = train.n_items
        self.unrated_value = train.rating_scale[0] - 1.0
        order = np.lexsort((train.items, train.users))
        self.users = train.users[order]
        self.items = train.items[order]
        self.ratings = train.ratings[order]
        self.keys = self.users * self.n_items + self.items
        self.indptr = np.searchsorted(self.users, np.arange(train.n_users + 1))
        self.degree = np.diff(self.indptr)

    def rating_of(self, users, items):
        keys = users * self.n_items + items
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        hit = self.keys[pos] == keys
        return np.where(hit, self.ratings[pos], self.unrated_value)

    def draw(self, rng: np.random.Generator, size: int, unrated_share: float):
        k = rng.integers(0, len(self.users), size)
        u = self.users[k]
        i = self.items[k]
        r_i = self.ratings[k]
        deg = self.indptr[u + 1] - self.indptr[u]
        j_rated = self.items[self.indptr[u] + (rng.random(size) * deg).astype(np.int64)]
        j_any = rng.integers(0, self.n_items, size)
        j = np.where(rng.random(size) < unrated_share, j_any, j_rated)
        r_j = self.rating_of(u, j)
        keep = r_i != r_j
        u, i, j, r_i, r_j = u[keep], i[keep], j[keep], r_i[keep], r_j[keep]
        flip = r_j > r_i
        pos = np.where(flip, j, i)
        neg = np.where(flip, i, j)
        return u, pos, neg


def _top_pools(P, Q, users, pool_size):
    S = P[users] @ Q.T
    part = np.argpartition(-S, pool_size - 1, axis=1)[:, :pool_size]
    return np.sort(part, axis=1)


def _pool_sampler(partition: PopularityPartition, pool_size: int):
    head = np.array(sorted(partition.short_head), dtype=np.int64)
    tail = np.array(sorted(partition.long_tail), dtype=np.int64)
    if len(head) == 0 or len(tail) == 0:
        only = head if len(head) else tail

        def draw(rng, B):
            return only[rng.integers(0, len(only), (B, pool_size))]

        return draw
    n_head = pool_size // 2
    n_tail = pool_size - n_head

    def draw(rng, B):
        return np.concatenate(
            [head[rng.integers(0, len(head), (B, n_head))], tail[rng.integers(0, len(tail), (B, n_tail))]],
            axis=1,
        )

    return draw


def _train(train: InteractionDataset, cfg: TrainConfig, partition: PopularityPartition | None) -> FactorModel:
    if len(train) == 0:
        raise DataError("cannot train on an empty dataset")
    lam = cfg.lambda_reg
    if lam > 0 and partition is None:
        raise ConfigError("lambda_reg > 0 requires a popularity partition")
    if partition is not None and partition.n_items != train.n_items:
        raise ConfigError("partition does not match the training item vocabulary")
    if lam > 0 and cfg.reg_pool_size > train.n_items:
        raise ConfigError("reg_pool_size exceeds the number of items")

    rng = np.random.default_rng(cfg.seed)
    P = rng.uniform(-0.01, 0.01, (train.n_users, cfg.f))
    Q = rng.uniform(-0.01, 0.01, (train.n_items, cfg.f))
    sampler = _PairSampler(train)

    if lam > 0:
        reg_rng = np.random.default_rng([cfg.seed, 1])
        draw_pools = _pool_sampler(partition, cfg.reg_pool_size)
        tail_mask = partition.tail_mask

    lr, l2, margin = cfg.learn_rate, cfg.l2_weight, cfg.margin
    history = []
    for epoch in range(cfg.epochs):
        users, pos, neg = sampler.draw(rng, cfg.pair_samples_per_epoch, cfg.unrated_pair_share)
        if lam > 0 and cfg.reg_pool == "top":
            epoch_pools = _top_pools(P, Q, np.arange(train.n_users), cfg.reg_pool_size)
        epoch_loss = 0.0
        # a diverging run overflows before the epoch-end check reports it
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, len(users), cfg.batch_size):
                u = users[start : start + cfg.batch_size]
                i = pos[start : start + cfg.batch_size]
                j = neg[start : start + cfg.batch_size]
                Pu, Qi, Qj = P[u], Q[i], Q[j]
                loss, dgap = pairwise_hinge_terms(Pu, Qi, Qj, margin)
                epoch_loss += loss.sum()
                gPu = dgap[:, None] * (Qi - Qj) + 2 * l2 * Pu
                gQi = dgap[:, None] * Pu + 2 * l2 * Qi
                gQj = -dgap[:, None] * Pu + 2 * l2 * Qj
                q_index = [i, j]
                q_rows = [gQi, gQj]
                if lam > 0:
                    pools = epoch_pools[u] if cfg.reg_pool == "top" else draw_pools(reg_rng, len(u))
                    Qp = Q[pools]
                    values, dscore = _PENALTY[cfg.reg_form](Pu, Qp, co_membership(tail_mask, pools))
                    # reg_u counts once per user: u is drawn ~|I_u| times per pass, so each draw carries lam / |I_u|
                    weight = lam / sampler.degree[u]
                    epoch_loss += (weight * values).sum()
                    dscore = weight[:, None] * dscore
                    gPu = gPu + np.einsum("bk,bkf->bf", dscore, Qp)
                    q_index.append(pools.ravel())
                    q_rows.append((dscore[:, :, None] * Pu[:, None, :]).reshape(-1, cfg.f))
                _scatter_add(P, u, -lr * gPu)
                _scatter_add(Q, np.concatenate(q_index), -lr * np.concatenate(q_rows))

        with np.errstate(invalid="ignore"):
            worst = max(np.abs(P).max(), np.abs(Q).max())
        if not np.isfinite(worst) or worst > DIVERGENCE_BOUND:
            raise TrainingDivergence(epoch, f"max |factor| = {worst:g}")
        history.append(float(epoch_loss / max(len(users), 1)))
        logger.debug("epoch %d loss %.6f", epoch, history[-1])

    desc = "base" if lam == 0 else f"lt_reg({lam:g})"
    return FactorModel(P, Q, desc, train.user_ids, train.item_ids, history)


def train_base(train: InteractionDataset, cfg: TrainConfig | None = None, seed: int | None = None) -> FactorModel:
    """Fit the pairwise ranker without the long-tail term."""
    cfg = cfg or TrainConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if cfg.lambda_reg != 0:
        raise ConfigError("train_base expects lambda_reg == 0; use train_lt_reg")
    return _train(train, cfg, None)


def train_lt_reg(
    train: InteractionDataset,
    partition: PopularityPartition,
    cfg: TrainConfig | None = None,
    seed: int | None = None,
) -> FactorModel:
    """Fit the pairwise ranker with the long-tail regularizer weighted by ``cfg.lambda_reg``.

    With ``lambda_reg == 0`` the run is bitwise identical to :func:`train_base`;
    the pool sampler draws from its own generator so the pair stream is unaffected.
    """
    cfg = cfg or TrainConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return _train(train, cfg, partition)


# --- ranking ----------------------------------------------------------------


def top_n_candidates(model: FactorModel, u: int, n: int, exclude: Sequence[int] | set[int] = ()) -> RankedList:
    """Highest-scoring ``n`` items outside ``exclude``; ties go to the lower item index."""
    scores = model.user_scores(u)
    return _top_n_from_scores(u, scores, n, np.fromiter(exclude, dtype=np.int64), "base")


def _top_n_from_scores(u, scores, n, exclude, origin):
    n_items = len(scores)
    excluded = np.unique(exclude)
    if len(excluded) and (excluded.min() < 0 or excluded.max() >= n_items):
        raise IndexError("excluded item index out of range")
    if n < 1 or n > n_items - len(excluded):
        raise ValueError(f"cannot take {n} items from {n_items - len(excluded)} candidates")
    masked = -scores
    masked[excluded] = np.inf
    order = np.argsort(masked, kind="stable")[:n]
    return RankedList.from_arrays(u, order, scores[order], origin)


def top_n_for_users(
    model: FactorModel,
    users: Sequence[int],
    n: int,
    exclude: Sequence[np.ndarray],
    origin: str = "base",
    chunk: int = 1024,
) -> dict[int, RankedList]:
    """:func:`top_n_candidates` for many users, scoring in blocks."""
    users = list(users)
    out = {}
    for start in range(0, len(users), chunk):
        block = users[start : start + chunk]
        S = model.P[block] @ model.Q.T
        for row, u in enumerate(block):
            out[u] = _top_n_from_scores(u, S[row], n, np.asarray(exclude[u], dtype=np.int64), origin)
    return out
