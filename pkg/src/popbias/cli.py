"""Command line entry point: ``popbias <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, DataError, TrainingDivergence
from .harness import (
    REPORT_COLUMNS,
    ExperimentError,
    MetricRow,
    _fmt,
    emit_report,
    emit_summary,
    load_config,
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
    ndcg,
)
from .mf import TrainConfig, top_n_for_users, train_base
from .rerank import category_prior, minmax_normalize, xquad_rerank

logger = logging.getLogger("popbias")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- list CSV helpers -------------------------------------------------------

LIST_COLUMNS = ("user", "item", "score", "rank", "origin")


def read_lists_csv(path: str | Path) -> list[dict]:
    """Rows of a ``user,item,score,rank[,origin]`` file, ordered by user then rank."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"user", "item", "score", "rank"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                rows.append(
                    {
                        "user": row["user"],
                        "item": row["item"],
                        "score": float(row["score"]),
                        "rank": int(row["rank"]),
                        "origin": row.get("origin") or "base",
                    }
                )
            except (TypeError, ValueError):
                raise DataError(f"malformed row {row!r}", line=reader.line_num) from None
    if not rows:
        raise DataError(f"{path} contains no list rows")
    return rows


def write_lists_csv(path: str | Path, lists: list[RankedList], user_ids, item_ids) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LIST_COLUMNS)
        for lst in lists:
            for rank, (item, score) in enumerate(lst.entries, start=1):
                writer.writerow([user_ids[lst.user], item_ids[item], f"{score:.6f}", rank, lst.origin])


class _Vocab:
    """Dense indices for string ids, assigned in first-seen order."""

    def __init__(self, ids=()):
        self.index: dict[str, int] = {}
        self.ids: list[str] = []
        for i in ids:
            self.add(i)

    def add(self, key: str) -> int:
        if key not in self.index:
            self.index[key] = len(self.ids)
            self.ids.append(key)
        return self.index[key]


def _group_lists(rows, users: _Vocab, items: _Vocab) -> dict[str, dict[int, RankedList]]:
    grouped: dict[tuple[str, str], list[dict]] = defaultdict(list)
    for row in rows:
        grouped[(row["origin"], row["user"])].append(row)
    out: dict[str, dict[int, RankedList]] = defaultdict(dict)
    for (origin, user), entries in grouped.items():
        entries.sort(key=lambda r: r["rank"])
        u = users.add(user)
        out[origin][u] = RankedList.from_arrays(
            u, [items.add(r["item"]) for r in entries], [r["score"] for r in entries], origin
        )
    return out


# --- commands ---------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    output = args.output or cfg.output
    if not output:
        raise ConfigError("no output path: pass --output or set 'output' in the config")
    report = run_experiment(cfg)
    path = emit_report(report, output, args.format)
    summary = path.with_name(path.stem + "_summary.csv")
    emit_summary(report, summary)
    print(f"wrote {path} and {summary}")
    return EXIT_OK


def cmd_partition(args) -> int:
    train = D.load_interactions(args.input, args.format, args.delimiter)
    partition = D.build_popularity_partition(train, args.head_ratio)
    D.write_partition_csv(partition, train.item_ids, args.out)
    print(f"{len(partition.short_head)} head / {len(partition.long_tail)} tail items -> {args.out}")
    return EXIT_OK


def cmd_candidates(args) -> int:
    train = D.load_interactions(args.train, args.format, args.delimiter)
    cfg = TrainConfig(f=args.f, epochs=args.epochs, learn_rate=args.learn_rate, seed=args.seed)
    model = train_base(train, cfg)
    profiles = train.user_items()
    users = [u for u in range(train.n_users) if train.n_items - len(profiles[u]) >= args.m]
    lists = top_n_for_users(model, users, args.m, profiles)
    write_lists_csv(args.out, [lists[u] for u in users], train.user_ids, train.item_ids)
    print(f"{len(users)} candidate lists of length {args.m} -> {args.out}")
    return EXIT_OK


def _profiles_from(path, fmt, delimiter, users: _Vocab, items: _Vocab) -> dict[int, list[int]]:
    train = D.load_interactions(path, fmt, delimiter)
    profiles: dict[int, list[int]] = defaultdict(list)
    for user, item, _ in train.interactions:
        profiles[users.add(user)].append(items.add(item))
    return profiles, train


def cmd_rerank(args) -> int:
    segments = D.read_partition_csv(args.partition)
    rows = read_lists_csv(args.candidates)
    users, items = _Vocab(), _Vocab(sorted(segments))
    grouped = _group_lists(rows, users, items)
    profiles: dict[int, list[int]] = {}
    if args.train:
        profiles, _ = _profiles_from(args.train, args.format, args.delimiter, users, items)
    partition = D.partition_from_segments(items.ids, segments)

    out = []
    for origin in sorted(grouped):
        for u, cands in grouped[origin].items():
            prior = category_prior(profiles.get(u, []), partition, args.smoothing)
            ranked = RankedList(u, cands.entries, "base")
            out.append(
                xquad_rerank(minmax_normalize(ranked), partition, prior, args.lam, args.variant, args.n, args.mode)
            )
    out.sort(key=lambda lst: users.ids[lst.user])
    write_lists_csv(args.out, out, users.ids, items.ids)
    print(f"re-ranked {len(out)} lists -> {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    segments = D.read_partition_csv(args.partition)
    rows = read_lists_csv(args.lists)
    users, items = _Vocab(), _Vocab(sorted(segments))
    grouped = _group_lists(rows, users, items)
    test = D.load_interactions(args.test, args.format, args.delimiter)
    for user, item, _ in test.interactions:
        users.add(user)
        items.add(item)
    phi = None
    if args.train:
        _, train = _profiles_from(args.train, args.format, args.delimiter, users, items)
        phi = np.zeros(len(items.ids))
        for _, item, _ in train.interactions:
            phi[items.index[item]] += 1
    partition = D.partition_from_segments(items.ids, segments, phi)

    relevant: dict[int, set[int]] = defaultdict(set)
    for user, item, rating in test.interactions:
        if rating >= args.tau:
            relevant[users.index[user]].add(items.index[item])
    judgments = RelevanceJudgments({u: frozenset(s) for u, s in relevant.items()}, args.tau)

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for origin in sorted(grouped):
            batch = RecommendationBatch(grouped[origin])
            n = args.n or min(len(lst) for lst in batch.lists.values())
            count, frac = distinct_long_tail_coverage(batch, partition)
            row = MetricRow(
                args.algorithm or origin,
                args.lam,
                args.fold,
                arp(batch, partition.phi) if phi is not None else float("nan"),
                aplt(batch, partition),
                aclt(batch, partition),
                count,
                frac,
                ndcg(batch, judgments, n),
            )
            writer.writerow([_fmt(v) for v in row.values()])
    print(f"metrics for {len(grouped)} list set(s) -> {args.out}")
    return EXIT_OK


def cmd_fixture_figure2(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fx = make_figure2_fixture()
    item_ids = [f"item{i}" for i in range(len(fx.popularity))]
    user_ids = ["U1", "U2"]
    for name, batch in (("system1", fx.system1), ("system2", fx.system2)):
        write_lists_csv(out / f"{name}.csv", list(batch.lists.values()), user_ids, item_ids)
    D.write_partition_csv(fx.partition, item_ids, out / "partition.csv")
    with open(out / "popularity.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "popularity"])
        for iid, p in zip(item_ids, fx.popularity):
            writer.writerow([iid, f"{p:.6f}"])
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system", "ARP", "popularity_sum", "coverage_count"])
        for name, batch in (("system1", fx.system1), ("system2", fx.system2)):
            total = sum(fx.popularity[i] for lst in batch.lists.values() for i in lst.items)
            count, _ = distinct_long_tail_coverage(batch, fx.partition)
            writer.writerow([name, _fmt(arp(batch, fx.popularity)), _fmt(total), count])
    print(f"coverage fixture -> {out}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_format(p):
    p.add_argument("--format", default="tsv_triples", choices=D.FORMATS, help="rating file format")
    p.add_argument("--delimiter", default=None, help="override the format's field separator")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="popbias", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="cross-validated experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="report path (overrides the config)")
    p.add_argument("--format", dest="format", default="csv", choices=("csv", "json"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("partition", help="short-head / long-tail split of a rating file")
    p.add_argument("--input", required=True)
    p.add_argument("--head-ratio", type=float, default=0.8)
    p.add_argument("--out", required=True)
    _add_format(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("candidates", help="train the base ranker and write top-m candidate lists")
    p.add_argument("--train", required=True)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--f", type=int, default=50)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learn-rate", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_format(p)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("rerank", help="xQuAD re-ranking of candidate lists")
    p.add_argument("--candidates", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--variant", choices=("binary", "smooth"), required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--train", help="training ratings for per-user segment priors")
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--mode", choices=("additive", "convex"), default="additive")
    _add_format(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("metrics", help="evaluate list files")
    p.add_argument("--lists", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", help="training ratings, needed for ARP")
    p.add_argument("--tau", type=float, default=4.0)
    p.add_argument("--n", type=int, default=None, help="NDCG cutoff (default: list length)")
    p.add_argument("--algorithm", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--fold", type=int, default=0)
    _add_format(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("fixture-figure2", help="write the equal-popularity / unequal-coverage fixture")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixture_figure2)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ExperimentError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, TrainingDivergence):
        return EXIT_DIVERGENCE
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, DataError, TrainingDivergence, ExperimentError, OSError, ValueError) as exc:
        print(f"popbias: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
