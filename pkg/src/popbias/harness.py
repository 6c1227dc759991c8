"""End-to-end experiments: split, train, re-rank, evaluate, report."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import (
    InteractionDataset,
    PopularityPartition,
    build_popularity_partition,
    cross_validation_folds,
    load_interactions,
    partition_from_counts,
)
from .errors import ConfigError, PopbiasError, TrainingDivergence
from .lists import RankedList
from .metrics import (
    RecommendationBatch,
    RelevanceJudgments,
    aclt,
    aplt,
    arp,
    distinct_long_tail_coverage,
    ndcg,
)
from .mf import TrainConfig, train_base, train_lt_reg, top_n_for_users
from .rerank import category_prior, rerank_users
from .synthetic import make_skewed_dataset

logger = logging.getLogger(__name__)

ALGORITHMS = ("base", "lt_reg", "binary_xquad", "smooth_xquad")
METRIC_COLUMNS = ("ARP", "APLT", "ACLT", "coverage_count", "coverage_fraction", "NDCG")
REPORT_COLUMNS = ("algorithm", "lambda", "fold") + METRIC_COLUMNS
SUMMARY_METRICS = METRIC_COLUMNS


class ExperimentError(PopbiasError):
    """A stage failed; ``stage`` names the fold and algorithm, ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"{stage}: {cause}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    format: str = "tsv_triples"
    delimiter: str | None = None
    k_folds: int = 5
    head_ratio: float = 0.8
    candidate_length: int = 100
    final_length: int = 10
    lambda_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    lambda_grids: dict[str, tuple[float, ...]] = field(default_factory=dict)
    algorithms: tuple[str, ...] = ALGORITHMS
    train: TrainConfig = field(default_factory=TrainConfig)
    ndcg_tau: float = 4.0
    seed: int = 0
    output: str | None = None
    sample_users: int | None = None
    prior_smoothing: float = 1.0
    stratify_by_user: bool = False
    rerank_mode: str = "additive"
    synthetic: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.final_length < self.candidate_length:
            raise ConfigError("final_length must be smaller than candidate_length")
        if self.final_length < 1:
            raise ConfigError("final_length must be positive")
        if not self.algorithms:
            raise ConfigError("algorithms must not be empty")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ConfigError(f"unknown algorithms {sorted(unknown)}; choose from {ALGORITHMS}")
        if not self.lambda_grid:
            raise ConfigError("lambda_grid must not be empty")
        for alg, grid in self.lambda_grids.items():
            if alg not in ALGORITHMS:
                raise ConfigError(f"lambda grid given for unknown algorithm {alg!r}")
            if not grid:
                raise ConfigError(f"lambda grid for {alg} is empty")
        if any(lam < 0 for g in [self.lambda_grid, *self.lambda_grids.values()] for lam in g):
            raise ConfigError("lambda values must be non-negative")
        if not 0 < self.head_ratio < 1:
            raise ConfigError("head_ratio must lie in (0, 1)")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.rerank_mode not in ("additive", "convex"):
            raise ConfigError("rerank_mode must be 'additive' or 'convex'")
        if self.sample_users is not None and self.sample_users < 1:
            raise ConfigError("sample_users must be positive")

    def grid_for(self, algorithm: str) -> tuple[float, ...]:
        return tuple(self.lambda_grids.get(algorithm, self.lambda_grid))


@dataclass(frozen=True)
class MetricRow:
    algorithm: str
    lam: float
    fold: int
    ARP: float
    APLT: float
    ACLT: float
    coverage_count: int
    coverage_fraction: float
    NDCG: float

    def values(self) -> tuple:
        return (self.algorithm, self.lam, self.fold) + tuple(getattr(self, c) for c in METRIC_COLUMNS)


@dataclass
class EvalReport:
    rows: list[MetricRow]

    def cells(self) -> list[tuple[str, float]]:
        seen = []
        for r in self.rows:
            if (r.algorithm, r.lam) not in seen:
                seen.append((r.algorithm, r.lam))
        return seen

    def summary(self) -> list[dict]:
        """Unweighted mean and population standard deviation across folds per (algorithm, lambda)."""
        out = []
        for alg, lam in self.cells():
            group = [r for r in self.rows if r.algorithm == alg and r.lam == lam]
            entry = {"algorithm": alg, "lambda": lam, "n_folds": len(group)}
            for col in SUMMARY_METRICS:
                vals = np.array([float(getattr(r, col)) for r in group])
                entry[f"{col}_mean"] = float(vals.mean())
                entry[f"{col}_std"] = float(vals.std())
            out.append(entry)
        return out

    def mean(self, algorithm: str, metric: str) -> list[tuple[float, float]]:
        """``[(lambda, mean metric)]`` for one algorithm, in grid order."""
        return [
            (e["lambda"], e[f"{metric}_mean"]) for e in self.summary() if e["algorithm"] == algorithm
        ]


# --- experiment -------------------------------------------------------------


def _sample_users(data: InteractionDataset, n: int, seed: int) -> InteractionDataset:
    present = np.unique(data.users)
    if n >= len(present):
        return data
    keep = np.random.default_rng([seed, 2]).choice(present, size=n, replace=False)
    rows = np.flatnonzero(np.isin(data.users, keep))
    sub = data.subset(rows)
    return InteractionDataset.from_triples(sub.interactions, rating_scale=data.rating_scale)


def _load_dataset(cfg: ExperimentConfig) -> InteractionDataset:
    if cfg.dataset == "synthetic":
        params = dict(cfg.synthetic)
        for key in ("n_users", "n_items", "n_factors"):
            if key in params:
                params[key] = int(params[key])
        params.setdefault("seed", cfg.seed)
        params["seed"] = int(params["seed"])
        return make_skewed_dataset(**params)
    return load_interactions(cfg.dataset, cfg.format, cfg.delimiter)


def _evaluate(
    algorithm: str,
    lam: float,
    fold: int,
    lists: dict[int, RankedList],
    test_users: frozenset[int],
    partition: PopularityPartition,
    judgments: RelevanceJudgments,
    n: int,
) -> MetricRow:
    batch = RecommendationBatch(lists, test_users)
    count, frac = distinct_long_tail_coverage(batch, partition)
    return MetricRow(
        algorithm,
        float(lam),
        fold,
        arp(batch, partition.phi),
        aplt(batch, partition),
        aclt(batch, partition),
        count,
        frac,
        ndcg(batch, judgments, n),
    )


class _Stage:
    def __init__(self, label: str):
        self.label = label

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, ExperimentError):
            return False
        if isinstance(exc, TrainingDivergence):
            raise TrainingDivergence(exc.epoch, f"{self.label}: {exc}") from exc
        if isinstance(exc, Exception):
            raise ExperimentError(self.label, exc) from exc
        return False


def run_experiment(cfg: ExperimentConfig, data: InteractionDataset | None = None) -> EvalReport:
    """Cross-validated comparison of the requested algorithms over their lambda grids.

    Per fold: the base ranker is trained once and its length-``candidate_length``
    lists are shared by both re-rankers across all lambdas; LT-Reg is retrained
    for every lambda. All lists are evaluated at ``final_length``.
    """
    if data is None:
        with _Stage("loading data"):
            data = _load_dataset(cfg)
    if cfg.sample_users is not None:
        data = _sample_users(data, cfg.sample_users, cfg.seed)

    m, n = cfg.candidate_length, cfg.final_length
    if data.n_items < m:
        raise ExperimentError("setup", ConfigError(f"catalog has {data.n_items} items, fewer than {m} candidates"))
    with _Stage("splitting"):
        folds = cross_validation_folds(data, cfg.k_folds, cfg.seed, cfg.stratify_by_user)

    rows: list[MetricRow] = []
    for fp in folds:
        k = fp.fold_id
        with _Stage(f"fold {k}: partition"):
            partition = build_popularity_partition(fp.train, cfg.head_ratio)
        profiles = fp.train.user_items()
        users = [u for u in np.unique(fp.test.users).tolist() if data.n_items - len(profiles[u]) >= m]
        skipped = len(np.unique(fp.test.users)) - len(users)
        if skipped:
            logger.warning("fold %d: skipping %d test users with fewer than %d unrated items", k, skipped, m)
        test_users = frozenset(users)
        judgments = RelevanceJudgments.from_test(fp.test, cfg.ndcg_tau)
        train_cfg = replace(cfg.train, lambda_reg=0.0, seed=cfg.train.seed + k)
        logger.info("fold %d: %d train, %d test interactions, %d test users", k, len(fp.train), len(fp.test), len(users))

        candidates = None
        if set(cfg.algorithms) & {"base", "binary_xquad", "smooth_xquad"}:
            with _Stage(f"fold {k}: base"):
                base_model = train_base(fp.train, train_cfg)
                candidates = top_n_for_users(base_model, users, m, profiles)
                base_lists = {u: c.head(n) for u, c in candidates.items()}

        for alg in cfg.algorithms:
            if alg in ("binary_xquad", "smooth_xquad"):
                priors = {u: category_prior(profiles[u], partition, cfg.prior_smoothing) for u in users}
            for lam in cfg.grid_for(alg):
                with _Stage(f"fold {k}: {alg} lambda={lam:g}"):
                    if alg == "base":
                        lists = base_lists
                    elif alg == "lt_reg":
                        model = train_lt_reg(fp.train, partition, train_cfg.with_lambda(lam))
                        lists = top_n_for_users(model, users, n, profiles, origin="lt_reg_model")
                    else:
                        variant = alg.split("_")[0]
                        lists = rerank_users(candidates, partition, priors, lam, variant, n, cfg.rerank_mode)
                    rows.append(_evaluate(alg, lam, k, lists, test_users, partition, judgments, n))

    order = {a: idx for idx, a in enumerate(ALGORITHMS)}
    rows.sort(key=lambda r: (order[r.algorithm], r.lam, r.fold))
    return EvalReport(rows)


# --- serialization ----------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.6f}"


def _rounded(value):
    if isinstance(value, (str, int, np.integer)):
        return value if isinstance(value, str) else int(value)
    v = float(value)
    return v if math.isnan(v) else float(f"{v:.6f}")


def emit_report(report: EvalReport, path: str | Path, format: str = "csv") -> Path:
    """Write one line per (algorithm, lambda, fold) with six-decimal floats."""
    if not report.rows:
        raise ValueError("report is empty")
    path = Path(path)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in report.rows:
            writer.writerow([_fmt(v) for v in r.values()])
        text = buf.getvalue()
    elif format == "json":
        objs = [dict(zip(REPORT_COLUMNS, (_rounded(v) for v in r.values()))) for r in report.rows]
        text = json.dumps(objs, indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    path.write_text(text, encoding="utf-8")
    return path


def emit_summary(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    summary = report.summary()
    columns = list(summary[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for entry in summary:
        writer.writerow([_fmt(entry[c]) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _row_from_mapping(obj) -> MetricRow:
    return MetricRow(
        str(obj["algorithm"]),
        float(obj["lambda"]),
        int(obj["fold"]),
        float(obj["ARP"]),
        float(obj["APLT"]),
        float(obj["ACLT"]),
        int(obj["coverage_count"]),
        float(obj["coverage_fraction"]),
        float(obj["NDCG"]),
    )


def load_report(path: str | Path) -> EvalReport:
    """Read a report written by :func:`emit_report` (format chosen by extension)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return EvalReport([_row_from_mapping(o) for o in json.loads(text)])
    return EvalReport([_row_from_mapping(o) for o in csv.DictReader(io.StringIO(text))])


# --- config file ------------------------------------------------------------

_SECTION = "experiment"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` lines.

    ``train.<field>`` keys set :class:`TrainConfig` fields, ``lambda_grid.<algorithm>``
    overrides the grid for one algorithm and ``synthetic.<param>`` passes
    generator parameters when ``dataset = synthetic``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    raw = dict(parser[_SECTION])

    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    kwargs: dict = {}
    train_kwargs: dict = {}
    grids: dict[str, tuple[float, ...]] = {}
    synthetic: dict[str, float] = {}
    try:
        for key, value in raw.items():
            value = value.strip()
            if key.startswith("train."):
                name = key[len("train.") :]
                if name not in train_fields:
                    raise ConfigError(f"unknown training option {name!r}")
                typ = train_fields[name]
                train_kwargs[name] = (
                    int(value) if typ == "int" else value if typ == "str" else float(value)
                )
            elif key.startswith("lambda_grid."):
                grids[key[len("lambda_grid.") :]] = _floats(value)
            elif key.startswith("synthetic."):
                synthetic[key[len("synthetic.") :]] = float(value)
            elif key in ("dataset", "format", "output", "rerank_mode"):
                kwargs[key] = value
            elif key == "delimiter":
                kwargs[key] = {"\\t": "\t", "tab": "\t"}.get(value, value) or None
            elif key in ("k_folds", "candidate_length", "final_length", "seed", "sample_users"):
                kwargs[key] = int(value)
            elif key in ("head_ratio", "ndcg_tau", "prior_smoothing"):
                kwargs[key] = float(value)
            elif key == "stratify_by_user":
                kwargs[key] = parser.getboolean(_SECTION, key)
            elif key == "lambda_grid":
                kwargs[key] = _floats(value)
            elif key == "algorithms":
                kwargs[key] = tuple(a for a in value.replace(",", " ").split())
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None

    if train_kwargs:
        kwargs["train"] = TrainConfig(**train_kwargs)
    return ExperimentConfig(**kwargs, lambda_grids=grids, synthetic=synthetic)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# --- equal-popularity coverage fixture ------------------------------------


class Figure2Fixture(NamedTuple):
    system1: RecommendationBatch
    system2: RecommendationBatch
    popularity: np.ndarray
    partition: PopularityPartition


def make_figure2_fixture() -> Figure2Fixture:
    """Two systems recommending 5 items to each of 2 users with equal total popularity.

    Popularity values are rating fractions (0.01 = rated by 1% of users).
    System 1 gives both users the same five long-tail items; system 2 gives
    them disjoint lists whose popularity values mirror each other, so ARP
    matches while distinct long-tail coverage is 5 against 10. Items 10 and
    11 are the popular head, not recommended by either system.
    """
    popularity = np.array(
        [0.01, 0.02, 0.03, 0.04, 0.05, 0.05, 0.04, 0.03, 0.02, 0.01, 0.65, 0.60]
    )
    partition = partition_from_counts(popularity, head_ratio=0.8)
    first = list(range(5))
    second = list(range(5, 10))

    def batch(lists):
        return RecommendationBatch(
            {u: RankedList.from_arrays(u, items, [1.0 - 0.1 * r for r in range(5)]) for u, items in enumerate(lists)}
        )

    return Figure2Fixture(batch([first, first]), batch([first, second]), popularity, partition)
