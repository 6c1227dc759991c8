"""Popularity-bias control for top-n recommendation.

Two ways to push recommendations toward the long tail: a long-tail
regularizer on a pairwise-ranking factor model (LT-Reg) and greedy xQuAD
re-ranking of a base ranker's candidates (binary and smooth coverage), plus
the metrics and cross-validation harness used to compare them.
"""

from .data import (
    FoldPair,
    InteractionDataset,
    PopularityPartition,
    build_popularity_partition,
    cross_validation_folds,
    load_interactions,
    partition_from_counts,
)
from .errors import ConfigError, DataError, PopbiasError, TrainingDivergence
from .harness import (
    EvalReport,
    ExperimentConfig,
    emit_report,
    load_report,
    make_figure2_fixture,
    run_experiment,
)
from .lists import RankedList
from .metrics import (
    RecommendationBatch,
    RelevanceJudgments,
    aclt,
    aplt,
    arp,
    distinct_long_tail_coverage,
    ilbu,
    ndcg,
)
from .mf import FactorModel, TrainConfig, predict_score, top_n_candidates, train_base, train_lt_reg
from .rerank import CategoryPrior, category_prior, minmax_normalize, xquad_rerank

__version__ = "0.1.0"

__all__ = [
    "CategoryPrior",
    "ConfigError",
    "DataError",
    "EvalReport",
    "ExperimentConfig",
    "FactorModel",
    "FoldPair",
    "InteractionDataset",
    "PopbiasError",
    "PopularityPartition",
    "RankedList",
    "RecommendationBatch",
    "RelevanceJudgments",
    "TrainConfig",
    "TrainingDivergence",
    "aclt",
    "aplt",
    "arp",
    "build_popularity_partition",
    "category_prior",
    "cross_validation_folds",
    "distinct_long_tail_coverage",
    "emit_report",
    "ilbu",
    "load_interactions",
    "load_report",
    "make_figure2_fixture",
    "minmax_normalize",
    "ndcg",
    "partition_from_counts",
    "predict_score",
    "run_experiment",
    "top_n_candidates",
    "train_base",
    "train_lt_reg",
    "xquad_rerank",
]
