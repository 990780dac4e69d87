import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorelab import analytic
from scorelab.metrics import (
    ModeReport,
    energy_distance,
    kl_from_uniform,
    mean_nearest_mode_distance,
    mode_coverage,
)

LOG25 = 3.2188758248682006
CENTERS = analytic.grid25_centers()


class TestModeCoverage:
    def test_all_centers(self):
        r = mode_coverage(np.repeat(CENTERS, 4, axis=0), CENTERS, 0.15)
        assert (r.covered, r.kl, r.unassigned) == (25, 0.0, 0)
        assert r.counts == [4] * 25

    def test_single_center(self):
        r = mode_coverage(np.tile(CENTERS[7], (40, 1)), CENTERS, 0.15)
        assert r.covered == 1
        assert r.kl == pytest.approx(LOG25, abs=1e-12)

    def test_unassigned(self):
        pts = np.vstack([CENTERS[:3], [[1.0, 1.0]]])
        r = mode_coverage(pts, CENTERS, 0.15)
        assert r.unassigned == 1 and sum(r.counts) == 3
        assert r.csv_row()[-1] == 4
        assert len(r.csv_row()) == len(ModeReport.CSV_HEADER)

    def test_generator_matches_uniform(self):
        pts = analytic.gen_grid25(26_000, seed=3).points
        r = mode_coverage(pts, CENTERS, 0.15)
        assert r.covered == 25
        assert r.kl < 0.01

    def test_kl_bound_from_multinomial_oracle(self):
        # 99.9th percentile of the KL of a 26k-draw uniform multinomial histogram
        rng = np.random.default_rng(0)
        sims = [kl_from_uniform(rng.multinomial(26_000, np.full(25, 1 / 25))) for _ in range(2000)]
        assert np.quantile(sims, 0.999) < 0.01

    def test_invariances(self):
        rng = np.random.default_rng(1)
        pts = analytic.gen_grid25(500, seed=2).points + rng.normal(scale=0.05, size=(500, 2))
        base = mode_coverage(pts, CENTERS, 0.15)
        assert mode_coverage(pts[rng.permutation(500)], CENTERS, 0.15) == base
        th = 0.7
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        shift = np.array([3.0, -2.0])
        moved = mode_coverage(pts @ rot.T + shift, CENTERS @ rot.T + shift, 0.15)
        assert moved.counts == base.counts and moved.unassigned == base.unassigned

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_threshold(self, bad):
        with pytest.raises(ValueError):
            mode_coverage(CENTERS, CENTERS, bad)

    def test_empty(self):
        with pytest.raises(ValueError):
            mode_coverage(np.empty((0, 2)), CENTERS, 0.1)
        with pytest.raises(ValueError):
            mode_coverage(CENTERS, np.empty((0, 2)), 0.1)


class TestKl:
    def test_moving_toward_uniform_lowers_kl(self):
        counts = np.array([10, 3, 5, 7])
        moved = counts.copy()
        moved[0] -= 1
        moved[1] += 1
        assert kl_from_uniform(moved) <= kl_from_uniform(counts)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=2, max_size=30).filter(lambda c: sum(c) > 0))
    def test_non_negative(self, counts):
        assert kl_from_uniform(counts) >= -1e-12

    def test_empty_is_inf(self):
        assert kl_from_uniform([0, 0]) == math.inf


class TestDistances:
    def test_zero_on_centers(self):
        assert mean_nearest_mode_distance(CENTERS, CENTERS) == 0.0

    def test_single_sample(self):
        assert mean_nearest_mode_distance([[3.0, 4.0]], [[0.0, 0.0]]) == pytest.approx(5.0)


class TestEnergyDistance:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=(100, 2))
        assert energy_distance(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_two_diracs(self):
        a = np.zeros((5, 2))
        b = np.tile([3.0, 4.0], (7, 1))
        assert energy_distance(a, b) == pytest.approx(10.0)

    def test_one_dimensional_path_matches_pairwise(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=300), rng.normal(1, 2, size=200)
        pair = np.abs(a[:, None] - b[None]).mean()
        aa = np.abs(a[:, None] - a[None]).mean()
        bb = np.abs(b[:, None] - b[None]).mean()
        assert energy_distance(a, b) == pytest.approx(2 * pair - aa - bb, rel=1e-10)

    def test_unbiased_variant(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(50, 2)), rng.normal(size=(40, 2))
        within_a = np.sqrt(((a[:, None] - a[None]) ** 2).sum(-1)).sum() / (50 * 49)
        within_b = np.sqrt(((b[:, None] - b[None]) ** 2).sum(-1)).sum() / (40 * 39)
        cross = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)).mean()
        assert energy_distance(a, b, unbiased=True) == pytest.approx(2 * cross - within_a - within_b, rel=1e-10)

    def test_permutation_null(self):
        rng = np.random.default_rng(6)
        n = 10_000
        a, b = rng.normal(size=n), rng.normal(size=n)
        obs = energy_distance(a, b)
        pooled = np.r_[a, b]
        null = []
        for _ in range(200):
            p = rng.permutation(2 * n)
            null.append(energy_distance(pooled[p[:n]], pooled[p[n:]]))
        assert obs < np.quantile(null, 0.99)

    def test_detects_shift(self):
        rng = np.random.default_rng(7)
        assert energy_distance(rng.normal(size=2000), rng.normal(0.3, 1, size=2000)) > 0.01

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 30), st.integers(1, 30), st.integers(1, 3))
    def test_symmetric_non_negative(self, seed, n, m, d):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(n, d)), rng.normal(size=(m, d)) * 2
        ab, ba = energy_distance(a, b), energy_distance(b, a)
        assert ab >= 0
        assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            energy_distance(np.zeros((3, 2)), np.zeros((3, 3)))
