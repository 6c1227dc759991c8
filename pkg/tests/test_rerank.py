import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import greedy_xquad
from popbias.data import partition_from_counts, partition_from_segments
from popbias.lists import RankedList
from popbias.rerank import CategoryPrior, category_prior, minmax_normalize, rerank_users, xquad_rerank

LAMBDAS = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


def _partition(n_items, tail_items):
    segs = {str(i): ("tail" if i in tail_items else "head") for i in range(n_items)}
    return partition_from_segments([str(i) for i in range(n_items)], segs)


def _candidates(scores, user=0):
    items = np.argsort(-np.asarray(scores), kind="stable")
    return RankedList.from_arrays(user, items, np.asarray(scores)[items], "base")


class TestPrior:
    def test_ratio(self):
        part = _partition(4, {3})
        p = category_prior([0, 1, 2, 3], part)
        assert (p.p_head, p.p_tail) == (0.75, 0.25)

    def test_empty_smoothed(self):
        p = category_prior([], _partition(2, {1}), smoothing=1.0)
        assert (p.p_head, p.p_tail) == (0.5, 0.5)

    def test_all_tail(self):
        p = category_prior([1, 2], _partition(3, {1, 2}))
        assert (p.p_head, p.p_tail) == (0.0, 1.0)

    def test_empty_unsmoothed(self):
        with pytest.raises(ValueError):
            category_prior([], _partition(2, {1}))

    def test_invalid(self):
        with pytest.raises(ValueError):
            CategoryPrior(0.7, 0.7)


class TestNormalize:
    def test_range(self):
        out = minmax_normalize(RankedList.from_arrays(0, [3, 1, 2], [4.0, 2.0, -1.0]))
        assert out.items == [3, 1, 2]
        assert out.scores.tolist() == [1.0, 0.6, 0.0]

    def test_constant(self):
        out = minmax_normalize(RankedList.from_arrays(0, [0, 1], [2.0, 2.0]))
        assert out.scores.tolist() == [1.0, 1.0]


class TestHandTraces:
    # A, B in the head with 0.9 and 0.85, C in the tail with 0.5
    part = _partition(3, {2})
    cands = RankedList.from_arrays(0, [0, 1, 2], [0.9, 0.85, 0.5])
    prior = CategoryPrior(0.5, 0.5)

    @pytest.mark.parametrize("variant", ["binary", "smooth"])
    def test_two_step(self, variant):
        out = xquad_rerank(self.cands, self.part, self.prior, 1.0, variant, 2)
        assert out.items == [0, 2]
        assert out.origin == f"{variant}_xquad"
        assert out.scores.tolist() == [0.9, 0.5]

    def test_oracle_agrees(self):
        for variant in ("binary", "smooth"):
            assert greedy_xquad([0, 1, 2], [0.9, 0.85, 0.5], {2}, 0.5, 0.5, 1.0, variant, 2) == [0, 2]

    def test_convex_mode(self):
        out = xquad_rerank(self.cands, self.part, self.prior, 1.0, "binary", 2, mode="convex")
        assert out.items[0] in (0, 1)
        with pytest.raises(ValueError):
            xquad_rerank(self.cands, self.part, self.prior, 1.5, "binary", 2, mode="convex")

    def test_tie_prefers_higher_base_then_lower_item(self):
        part = _partition(4, {2, 3})
        cands = RankedList.from_arrays(0, [3, 2, 0], [0.5, 0.5, 0.5])
        out = xquad_rerank(cands, part, CategoryPrior(0.5, 0.5), 0.0, "binary", 3)
        assert out.items == [0, 2, 3]


class TestErrors:
    part = _partition(3, {2})
    cands = RankedList.from_arrays(0, [0, 1, 2], [0.9, 0.85, 0.5])
    prior = CategoryPrior(0.5, 0.5)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(n=4), dict(n=0), dict(lam=-1.0), dict(variant="fuzzy"), dict(mode="multiplicative")],
    )
    def test_rejects(self, kwargs):
        args = dict(lam=1.0, variant="binary", n=2) | kwargs
        with pytest.raises(ValueError):
            xquad_rerank(self.cands, self.part, self.prior, **args)

    def test_unnormalized_scores(self):
        raw = RankedList.from_arrays(0, [0, 1, 2], [3.0, 2.0, 1.0])
        with pytest.raises(ValueError):
            xquad_rerank(raw, self.part, self.prior, 1.0, "binary", 2)


pools = st.integers(2, 12).flatmap(
    lambda m: st.tuples(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=m, max_size=m),
        st.lists(st.booleans(), min_size=m, max_size=m),
        st.integers(1, m),
        st.floats(0, 1),
    )
)


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(pool=pools, lam=st.sampled_from(LAMBDAS + [2.5]), variant=st.sampled_from(["binary", "smooth"]))
    def test_matches_greedy_oracle(self, pool, lam, variant):
        scores, tail_flags, n, p_tail = pool
        tail = {i for i, t in enumerate(tail_flags) if t}
        part = _partition(len(scores), tail)
        cands = _candidates(scores)
        out = xquad_rerank(cands, part, CategoryPrior(1 - p_tail, p_tail), lam, variant, n)
        expect = greedy_xquad(cands.items, cands.scores.tolist(), tail, 1 - p_tail, p_tail, lam, variant, n)
        assert out.items == expect
        assert len(out) == n and len(set(out.items)) == n and set(out.items) <= set(cands.items)

    @settings(max_examples=200, deadline=None)
    @given(pool=pools, variant=st.sampled_from(["binary", "smooth"]))
    def test_lambda_zero_is_base_prefix(self, pool, variant):
        scores, tail_flags, n, p_tail = pool
        part = _partition(len(scores), {i for i, t in enumerate(tail_flags) if t})
        cands = _candidates(scores)
        out = xquad_rerank(cands, part, CategoryPrior(1 - p_tail, p_tail), 0.0, variant, n)
        assert out.items == cands.items[:n]

    @settings(max_examples=200, deadline=None)
    @given(pool=pools, variant=st.sampled_from(["binary", "smooth"]))
    def test_tail_count_monotone_in_lambda(self, pool, variant):
        scores, tail_flags, n, p_tail = pool
        tail = {i for i, t in enumerate(tail_flags) if t}
        part = _partition(len(scores), tail)
        cands = _candidates(scores)
        prior = CategoryPrior(1 - p_tail, p_tail)
        # the pool for this property is head-heavy at the top, as base rankers are
        counts = [sum(i in tail for i in xquad_rerank(cands, part, prior, lam, variant, n).items) for lam in LAMBDAS]
        if all(i not in tail for i in cands.items[:n]):
            assert counts == sorted(counts)

    @staticmethod
    def _head_heavy_pool():
        gen = np.random.default_rng(11)
        popular = np.arange(50) < 20
        scores = np.where(popular, gen.uniform(0.4, 1.0, 50), gen.uniform(0.0, 0.6, 50))
        return _candidates(scores), _partition(50, set(np.flatnonzero(~popular).tolist()))

    def test_tail_count_monotone_on_fixed_pool(self):
        cands, part = self._head_heavy_pool()
        for variant in ("binary", "smooth"):
            for p_tail in (0.5, 0.7, 0.9):
                prior = CategoryPrior(1 - p_tail, p_tail)
                counts = [sum(part.is_tail(i) for i in xquad_rerank(cands, part, prior, lam, variant, 10).items)
                          for lam in LAMBDAS]
                assert counts == sorted(counts), (variant, p_tail, counts)
                assert counts[-1] > counts[0]

    def test_head_leaning_prior_can_pull_smooth_toward_head(self):
        # smooth coverage steers the list toward the user's own head/tail mix
        part = _partition(4, {1, 2})
        cands = RankedList.from_arrays(0, [0, 1, 2, 3], [1.0, 0.9, 0.8, 0.1])
        prior = CategoryPrior(0.9, 0.1)
        before = xquad_rerank(cands, part, prior, 0.0, "smooth", 3).items
        after = xquad_rerank(cands, part, prior, 2.0, "smooth", 3).items
        assert sum(i in (1, 2) for i in after) < sum(i in (1, 2) for i in before)

    def test_smooth_admits_at_least_binary_tail_items(self):
        # exhaustive over segment labelings of pools up to 8 items with fixed descending scores
        checked = 0
        for m in range(2, 9):
            scores = np.linspace(1.0, 0.0, m)
            for flags in itertools.product([False, True], repeat=m):
                tail = {i for i, t in enumerate(flags) if t}
                for n in range(1, m + 1):
                    for lam in (0.5, 1.0):
                        for p_tail in (0.25, 0.5, 0.75):
                            args = ([*range(m)], scores.tolist(), tail, 1 - p_tail, p_tail, lam)
                            b = greedy_xquad(*args, "binary", n)
                            s = greedy_xquad(*args, "smooth", n)
                            nb = sum(i in tail for i in b)
                            if nb <= 1:
                                checked += 1
                                assert sum(i in tail for i in s) >= nb
        assert checked > 1000

    def test_package_agrees_on_exhaustive_pools(self):
        for m in range(2, 7):
            scores = np.linspace(1.0, 0.1, m)
            for flags in itertools.product([False, True], repeat=m):
                tail = {i for i, t in enumerate(flags) if t}
                part = _partition(m, tail)
                cands = RankedList.from_arrays(0, range(m), scores)
                for variant in ("binary", "smooth"):
                    out = xquad_rerank(cands, part, CategoryPrior(0.5, 0.5), 1.0, variant, m)
                    assert out.items == greedy_xquad(list(range(m)), scores.tolist(), tail, 0.5, 0.5, 1.0, variant, m)

    def test_first_pick_is_top_item_with_symmetric_prior(self, rng):
        for _ in range(50):
            scores = rng.random(10)
            part = _partition(10, set(rng.choice(10, 5, replace=False).tolist()))
            cands = _candidates(scores)
            for variant in ("binary", "smooth"):
                out = xquad_rerank(cands, part, CategoryPrior(0.5, 0.5), 1.0, variant, 3)
                assert out.items[0] == cands.items[0]


def test_rerank_users_normalizes_each_list():
    part = partition_from_counts([10, 9, 1, 1], 0.8)
    cands = {
        0: RankedList.from_arrays(0, [0, 1, 2, 3], [9.0, 8.0, 7.0, 1.0]),
        1: RankedList.from_arrays(1, [1, 3, 0, 2], [5.0, 4.0, 3.0, 2.0]),
    }
    priors = {0: CategoryPrior(0.5, 0.5), 1: CategoryPrior(0.5, 0.5)}
    out = rerank_users(cands, part, priors, 0.0, "smooth", 2)
    assert out[0].items == [0, 1] and out[1].items == [1, 3]
    assert out[0].scores.tolist() == [1.0, 0.875]
