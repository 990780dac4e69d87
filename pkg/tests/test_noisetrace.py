import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorelab.errors import StepTooSmallError
from scorelab.noisetrace import (
    TRACE_HEADER,
    als_level_closed_form,
    als_monotonicity_condition,
    als_stationary_std,
    als_trace,
    cas_entering_stds,
    cas_final_std,
    cas_trace,
    figure_rows,
    write_trace_csv,
)
from scorelab.schedules import geometric_schedule

# sqrt(2 / 1.9), evaluated with mpmath at 30 digits
LIMIT_ETA_01 = 1.02597835208515409


def random_config(rng):
    sigma1 = float(np.exp(rng.uniform(0, np.log(100))))
    sched = geometric_schedule(sigma1, sigma1 * float(np.exp(rng.uniform(np.log(1e-4), np.log(0.5)))),
                               int(rng.integers(2, 300)))
    eta = float(rng.uniform(1 - sched.gamma, 1.0))
    return sched, eta


class TestAlsTrace:
    def test_stationary_value(self):
        assert als_stationary_std(1.0, 0.1) == pytest.approx(LIMIT_ETA_01, abs=1e-15)

    def test_converges_after_500_steps(self):
        s = geometric_schedule(1.0, 1.0, 1)
        tr = als_trace(s, 0.1, 500, 3.0)
        assert abs(tr.v[-1] - LIMIT_ETA_01) < 1e-6

    @pytest.mark.parametrize("eta", [0.01, 0.1, 0.5, 0.99])
    @pytest.mark.parametrize("v0", [0.2, 1.0, 7.0])
    def test_closed_form(self, eta, v0):
        s = geometric_schedule(1.3, 1.3, 1)
        tr = als_trace(s, eta, 200, v0)
        np.testing.assert_allclose(tr.v, als_level_closed_form(v0, 1.3, eta, np.arange(1, 201)), rtol=1e-12)

    def test_closed_form_across_levels(self):
        s = geometric_schedule(5.0, 0.5, 4)
        tr = als_trace(s, 0.2, 7, 6.0)
        v = 6.0
        for t in range(4):
            seg = tr.v[tr.level == t]
            np.testing.assert_allclose(seg, als_level_closed_form(v, s[t], 0.2, np.arange(1, 8)), rtol=1e-12)
            v = seg[-1]

    def test_fixed_point(self):
        s = geometric_schedule(2.0, 2.0, 1)
        v0 = als_stationary_std(2.0, 0.3)
        np.testing.assert_allclose(als_trace(s, 0.3, 50, v0).v, v0, rtol=1e-14)

    def test_strictly_above_schedule(self):
        s = geometric_schedule(50, 0.01, 232)
        for n in (1, 2, 5, 20):
            tr = als_trace(s, 0.1, n, s.sigma1)
            assert np.all(tr.v > tr.sigma)

    @pytest.mark.parametrize("eta", [0.0, 1.0, -0.1])
    def test_eta_range(self, eta):
        with pytest.raises(ValueError):
            als_trace(geometric_schedule(1, 0.1, 3), eta, 1, 1.0)

    def test_v0_positive(self):
        with pytest.raises(ValueError):
            als_trace(geometric_schedule(1, 0.1, 3), 0.1, 1, 0.0)


class TestMonotonicity:
    def test_examples(self):
        assert als_monotonicity_condition(1.0, 1.0) == 0.0
        assert als_monotonicity_condition(1.0, 2.0) == 1.5

    @pytest.mark.parametrize("ratio", [1.2, 2.0, 5.0])
    def test_decreasing_below_threshold(self, ratio):
        thr = als_monotonicity_condition(1.0, ratio)
        s = geometric_schedule(1.0, 1.0, 1)
        for eta in np.linspace(0.01, min(thr, 1.0) - 1e-3, 7):
            v = als_trace(s, eta, 100, ratio).v
            assert np.all(np.diff(np.r_[ratio, v]) <= 0)

    def test_increasing_from_below(self):
        s = geometric_schedule(1.0, 1.0, 1)
        v = als_trace(s, 0.5, 30, 0.5).v
        assert np.all(np.diff(np.r_[0.5, v]) >= 0)


class TestCasTrace:
    def test_exact_random_configs(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            sched, eta = random_config(rng)
            tr = cas_trace(sched, eta)
            assert np.abs(tr.v - sched.sigmas).max() < 1e-12 * sched.sigma1

    def test_eta_one(self):
        s = geometric_schedule(10, 0.1, 20)
        np.testing.assert_allclose(cas_trace(s, 1.0).v, s.sigmas, rtol=1e-15)

    def test_entering_stds_from_sigma1(self):
        s = geometric_schedule(10, 0.1, 20)
        e = cas_entering_stds(s, 0.4, s.sigma1)
        np.testing.assert_allclose(e[:-1], s.sigmas, rtol=1e-13)
        assert e[-1] == pytest.approx(cas_final_std(s, 0.4), rel=1e-13)

    def test_step_too_small(self):
        s = geometric_schedule(1.0, 0.5, 2)
        with pytest.raises(StepTooSmallError):
            cas_trace(s, 0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.floats(0.0, 1.0))
    def test_als_dominates_cas(self, n_sigma, u):
        s = geometric_schedule(50, 0.01, 60)
        lo = 1 - geometric_schedule(50, 0.01, (60 - 1) * n_sigma + 1).gamma
        eta = lo + (0.999 - lo) * u + 1e-9
        rows = figure_rows(s, eta, n_sigma)
        diff = np.array([r[5] for r in rows])
        assert np.all(diff >= 0)


class TestFigureRows:
    def test_gap_shrinks_with_n_sigma(self):
        s = geometric_schedule(50, 0.01, 232)
        gaps = []
        for n in (1, 2, 5):
            rows = figure_rows(s, 0.1, n)
            ends = np.array([r[3] for r in rows])[n - 1 :: n]
            gaps.append(ends - s.sigmas)
        assert np.all(gaps[0] > gaps[1]) and np.all(gaps[1] > gaps[2])

    def test_cas_column_is_schedule(self, tmp_path):
        s = geometric_schedule(50, 0.01, 232)
        rows = figure_rows(s, 0.1, 1)
        np.testing.assert_allclose([r[4] for r in rows], [r[2] for r in rows], rtol=1e-12)
        path = tmp_path / "t.csv"
        write_trace_csv(rows, path)
        lines = path.read_text().splitlines()
        assert tuple(lines[0].split(",")) == TRACE_HEADER
        assert len(lines) == 233
        last = lines[-1].split(",")
        assert float(last[3]) > 0.01
