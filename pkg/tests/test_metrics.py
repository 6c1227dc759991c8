import itertools
import math

import numpy as np
import pytest

import oracles
from popbias.data import InteractionDataset, partition_from_segments
from popbias.lists import RankedList
from popbias.metrics import (
    RecommendationBatch,
    RelevanceJudgments,
    aclt,
    aplt,
    arp,
    distinct_long_tail_coverage,
    ilbu,
    ndcg,
)


def _partition(n_items, tail):
    ids = [str(i) for i in range(n_items)]
    return partition_from_segments(ids, {str(i): ("tail" if i in tail else "head") for i in range(n_items)})


def _batch(lists):
    return RecommendationBatch({u: RankedList.from_arrays(u, items, np.zeros(len(items))) for u, items in lists.items()})


def random_case(gen, equal_length=False):
    n_items = int(gen.integers(10, 40))
    tail = set(gen.choice(n_items, int(gen.integers(0, n_items)), replace=False).tolist())
    n_users = int(gen.integers(1, 21))
    length = int(gen.integers(2, 11))
    lists = {}
    for u in gen.choice(100, n_users, replace=False).tolist():
        size = length if equal_length else int(gen.integers(2, 11))
        lists[u] = gen.choice(n_items, size, replace=False).tolist()
    phi = gen.integers(0, 500, n_items).astype(float).tolist()
    relevant = {u: set(gen.choice(n_items, int(gen.integers(0, 5)), replace=False).tolist()) for u in lists}
    return n_items, tail, lists, phi, relevant


class TestIlbu:
    def test_homogeneous(self):
        part = _partition(5, {0, 1, 2, 3, 4})
        assert ilbu(RankedList.from_arrays(0, [0, 1, 2, 3], [0] * 4), part) == 1.0

    def test_balanced_pair(self):
        assert ilbu(RankedList.from_arrays(0, [0, 1], [0, 0]), _partition(2, {1})) == 0.0

    def test_three_plus_one(self):
        assert ilbu(RankedList.from_arrays(0, [0, 1, 2, 3], [0] * 4), _partition(4, {3})) == 0.5

    def test_needs_two(self):
        with pytest.raises(ValueError):
            ilbu(RankedList.from_arrays(0, [0], [0]), _partition(1, set()))

    def test_label_swap_symmetry(self):
        gen = np.random.default_rng(0)
        for _ in range(50):
            tail = set(gen.choice(10, 4, replace=False).tolist())
            lst = RankedList.from_arrays(0, gen.choice(10, 6, replace=False), np.zeros(6))
            assert ilbu(lst, _partition(10, tail)) == ilbu(lst, _partition(10, set(range(10)) - tail))

    def test_balanced_split_minimizes(self):
        for n in range(2, 11):
            part = _partition(2 * n, set(range(n, 2 * n)))
            values = {}
            for n_tail in range(n + 1):
                items = list(range(n - n_tail)) + list(range(n, n + n_tail))
                values[n_tail] = ilbu(RankedList.from_arrays(0, items, np.zeros(n)), part)
            best = min(values.values())
            assert {k for k, v in values.items() if v == best} == {n // 2, (n + 1) // 2}


class TestExamples:
    def test_arp(self):
        assert arp(_batch({0: [0, 1]}), [1.0, 1.0]) == 1.0
        assert arp(_batch({0: [0, 1], 1: [2, 3]}), [10.0, 20.0, 30.0, 50.0]) == 27.5
        assert arp(_batch({0: [0]}), [7.0]) == 7.0

    def test_aplt_aclt(self):
        tail = set(range(3, 10))
        part = _partition(20, tail)
        assert aplt(_batch({0: [3, 4], 1: [5, 6]}), part) == 1.0
        three_each = _batch({u: [3, 4, 5] + list(range(10, 17)) for u in range(3)})
        assert aplt(three_each, part) == pytest.approx(0.3, abs=1e-15)
        assert aplt(_batch({0: [10, 11]}), part) == 0.0
        assert aclt(_batch({u: list(range(3, 10)) + [1, 2, 0] for u in range(2)}), _partition(10, set(range(10)))) == 10.0
        assert aclt(_batch({0: [3, 4, 5, 0], 1: [3, 4, 5, 6, 7]}), part) == 4.0
        assert aclt(_batch({0: [0, 1]}), part) == 0.0

    def test_coverage(self):
        part = _partition(10, set(range(2, 10)))
        assert distinct_long_tail_coverage(_batch({0: [2, 3, 4], 1: [2, 3, 4]}), part) == (3, 3 / 8)
        assert distinct_long_tail_coverage(_batch({0: [2, 3, 4, 5], 1: [6, 7, 8, 9]}), part) == (8, 1.0)

    def test_ndcg(self):
        judg = RelevanceJudgments({0: frozenset({5})})
        assert ndcg(_batch({0: [5, 1]}), judg, 2) == 1.0
        assert ndcg(_batch({0: [1, 5]}), judg, 2) == pytest.approx(1 / math.log2(3))
        assert ndcg(_batch({0: [1, 2]}), judg, 2) == 0.0

    def test_ndcg_excludes_users_without_relevant_items(self):
        judg = RelevanceJudgments({0: frozenset({5})})
        assert ndcg(_batch({0: [5, 1], 1: [2, 3]}), judg, 2) == 1.0
        assert math.isnan(ndcg(_batch({1: [2, 3]}), judg, 2))

    def test_ndcg_cutoff(self):
        with pytest.raises(ValueError):
            ndcg(_batch({0: [1, 2]}), RelevanceJudgments({}), 3)

    def test_judgments_from_test(self):
        test = InteractionDataset.from_triples([("a", "x", 5), ("a", "y", 3), ("b", "y", 4)])
        judg = RelevanceJudgments.from_test(test, 4.0)
        assert judg.relevant == {0: frozenset({0}), 1: frozenset({1})}

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            aplt(RecommendationBatch({}), _partition(1, set()))

    def test_users_outside_test_set(self):
        with pytest.raises(ValueError):
            RecommendationBatch({0: RankedList.from_arrays(0, [1], [0.0])}, frozenset({1}))


class TestProperties:
    def test_user_order_invariance(self):
        gen = np.random.default_rng(3)
        for _ in range(30):
            n_items, tail, lists, phi, relevant = random_case(gen, equal_length=True)
            part = _partition(n_items, tail)
            judg = RelevanceJudgments({u: frozenset(r) for u, r in relevant.items()})
            fwd = _batch(lists)
            rev = _batch(dict(reversed(list(lists.items()))))
            for fn in (lambda b: arp(b, phi), lambda b: aplt(b, part), lambda b: aclt(b, part),
                       lambda b: distinct_long_tail_coverage(b, part), lambda b: ndcg(b, judg, 2)):
                a, b = fn(fwd), fn(rev)
                assert a == pytest.approx(b, abs=1e-12, nan_ok=True)

    def test_coverage_bounded_by_total_tail_hits(self):
        gen = np.random.default_rng(4)
        for _ in range(100):
            n_items, tail, lists, _, _ = random_case(gen)
            part = _partition(n_items, tail)
            count, _ = distinct_long_tail_coverage(_batch(lists), part)
            hits = [i for items in lists.values() for i in items if i in tail]
            assert count <= len(hits)
            assert (count == len(hits)) == (len(set(hits)) == len(hits))

    def test_ilbu_exhaustive_against_pair_oracle(self):
        part = _partition(20, set(range(10, 20)))
        for n in range(2, 8):
            for flags in itertools.product([0, 1], repeat=n):
                items = [10 + k if f else k for k, f in enumerate(flags)]
                lst = RankedList.from_arrays(0, items, np.zeros(n))
                assert abs(ilbu(lst, part) - oracles.ilbu_pairs(flags)) <= 1e-12
