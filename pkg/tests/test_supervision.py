import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdnet.supervision import (RegionPartition, estimate_supervision, group_channels, group_counts,
                                normalize_relevance, peak_rows, stack_channel)

import oracles


def _peak_map(n, c, h, w, rows_of_peak, rng):
    """Random batch where channel ``ch`` of image ``i`` peaks in row rows_of_peak[i][ch]."""
    T = rng.uniform(0, 1, size=(n, c, h, w))
    for i in range(n):
        for ch in range(c):
            T[i, ch, rows_of_peak[i][ch], rng.integers(w)] = 5.0
    return T


class TestRegionPartition:
    @pytest.mark.parametrize("h,k", [(12, 6), (24, 6), (6, 1), (8, 4)])
    def test_bands_tile_the_height(self, h, k):
        p = RegionPartition(h, k)
        rows = [r for j in range(k) for r in p.rows(j)]
        assert rows == list(range(h))
        assert all(len(p.rows(j)) == h // k for j in range(k))

    def test_indivisible_height_rejected(self):
        with pytest.raises(ValueError):
            RegionPartition(10, 6)


class TestStackChannel:
    def test_batch_order(self):
        T = np.arange(2 * 2 * 3 * 2, dtype=float).reshape(2, 2, 3, 2)
        M = stack_channel(T, 1)
        np.testing.assert_array_equal(M[0], T[0, 1])
        np.testing.assert_array_equal(M[1], T[1, 1])

    def test_round_trip(self):
        T = np.random.default_rng(0).normal(size=(3, 4, 6, 2))
        rebuilt = np.stack([stack_channel(T, c) for c in range(4)], axis=1)
        np.testing.assert_array_equal(rebuilt, T)

    def test_bad_channel(self):
        with pytest.raises(IndexError):
            stack_channel(np.zeros((1, 2, 6, 2)), 2)


class TestGrouping:
    def test_all_in_one_region(self):
        rng = np.random.default_rng(1)
        # rows 2..3 form the second band at H=12, K=6
        T = _peak_map(4, 1, 12, 4, [[2], [3], [2], [3]], rng)
        np.testing.assert_array_equal(group_channels(stack_channel(T, 0), RegionPartition(12, 6)), [0, 4, 0, 0, 0, 0])

    def test_constant_slice_counts_in_first_region(self):
        M = np.full((3, 12, 4), 0.7)
        np.testing.assert_array_equal(group_channels(M, RegionPartition(12, 6)), [3, 0, 0, 0, 0, 0])

    def test_peak_rows_tie_break(self):
        m = np.zeros((1, 4, 3))
        m[0, 2, 0] = m[0, 1, 2] = 1.0
        assert peak_rows(m)[0] == 1

    @given(st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_counts_sum_to_batch(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        T = rng.normal(size=(n, 3, 12, 3))
        counts = group_counts(T, 6)
        assert (counts.sum(axis=1) == n).all()

    def test_vectorized_counts_match_per_channel(self):
        T = np.random.default_rng(3).normal(size=(5, 7, 12, 3))
        part = RegionPartition(12, 6)
        expected = np.stack([group_channels(stack_channel(T, c), part) for c in range(7)])
        np.testing.assert_array_equal(group_counts(T, 6), expected)


class TestNormalizeRelevance:
    @pytest.mark.parametrize(
        "v,n,beta,expected",
        [
            ([0, 4, 0, 0, 0, 0], 4, 0.25, [0, 1, 0, 0, 0, 0]),
            ([1, 1, 1, 1, 0, 0], 4, 0.5, [0, 0, 0, 0, 0, 0]),
            ([2, 4, 2, 0, 0, 0], 8, 0.25, [0.5, 1, 0.5, 0, 0, 0]),
        ],
    )
    def test_examples(self, v, n, beta, expected):
        np.testing.assert_array_equal(normalize_relevance(v, n, beta), expected)

    def test_boundary_is_kept(self):
        # max equal to floor(beta * N) is not filtered
        np.testing.assert_array_equal(normalize_relevance([2, 1, 1, 0], 4, 0.5), [1, 0.5, 0.5, 0])

    def test_variants(self):
        v = [2, 4, 2, 0, 0, 0]
        np.testing.assert_array_equal(normalize_relevance(v, 8, 0.25, "one_hot"), [0, 1, 0, 0, 0, 0])
        np.testing.assert_array_equal(normalize_relevance([1, 1, 1, 1, 0, 0], 4, 0.5, "no_filtration"),
                                      [1, 1, 1, 1, 0, 0])

    @pytest.mark.parametrize("beta", [0.0, -0.1, 1.5])
    def test_beta_out_of_range(self, beta):
        with pytest.raises(ValueError):
            normalize_relevance([1, 0], 1, beta)

    @given(st.lists(st.integers(0, 10), min_size=1, max_size=8), st.floats(0.01, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_filtered_or_unit_max(self, v, beta):
        n = max(sum(v), 1)
        out = normalize_relevance(v, n, beta)
        assert ((out >= 0) & (out <= 1)).all()
        assert out.max() in (0.0, 1.0)
        if max(v) >= math.floor(beta * n) and max(v) > 0:
            np.testing.assert_array_equal(out, np.asarray(v) / max(v))


class TestEstimateSupervision:
    def test_channel_always_in_part_four(self):
        rng = np.random.default_rng(5)
        n, c = 6, 3
        rows = [[6 + (i % 2), *rng.integers(0, 12, size=c - 1)] for i in range(n)]
        S = estimate_supervision(_peak_map(n, c, 12, 4, rows, rng), 6, 0.25)
        np.testing.assert_array_equal(S[0], [0, 0, 0, 1, 0, 0])

    def test_constant_input(self):
        S = estimate_supervision(np.ones((4, 5, 12, 2)), 6, 0.25)
        np.testing.assert_array_equal(S, np.tile([1, 0, 0, 0, 0, 0], (5, 1)))

    @pytest.mark.parametrize("variant", ["batch", "one_hot", "no_filtration"])
    def test_matches_brute_force(self, variant):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            beta = float(rng.choice([0.25, 0.5, 0.75, 1.0]))
            T = rng.normal(size=(n, 4, 12, 3))
            if rng.random() < 0.3:
                T = np.round(T)  # force ties
            np.testing.assert_array_equal(estimate_supervision(T, 6, beta, variant),
                                          oracles.supervision(T, 6, beta, variant))

    @given(st.integers(0, 2**31), st.floats(0.1, 100.0))
    @settings(max_examples=30, deadline=None)
    def test_permutation_and_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        T = rng.normal(size=(6, 5, 12, 3))
        S = estimate_supervision(T, 6, 0.25)
        perm = rng.permutation(6)
        np.testing.assert_array_equal(estimate_supervision(T[perm], 6, 0.25), S)
        np.testing.assert_array_equal(estimate_supervision(T * scale, 6, 0.25), S)

    def test_rank_check(self):
        with pytest.raises(ValueError):
            estimate_supervision(np.zeros((2, 12, 3)), 6, 0.25)
