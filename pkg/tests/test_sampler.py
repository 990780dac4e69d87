import math

import numpy as np
import pytest

from scorelab import analytic, metrics
from scorelab.analytic import GaussianMixture
from scorelab.errors import ConfigError, DivergenceError, StepTooSmallError
from scorelab.noisetrace import als_trace, cas_entering_stds
from scorelab.rng import ChainRNG
from scorelab.sampler import (
    AnalyticScore,
    AnalyticUnconditionalScore,
    NetScore,
    NoiseRecorder,
    SampleRunConfig,
    TrajectoryRecorder,
    ZeroScore,
    als_sample,
    cas_sample,
    denoise_final,
    direct_step,
    eds,
    initial_samples,
    interpolation_step,
    residual_std,
    run_sampler,
    std_standard_error,
)
from scorelab.nn import Mlp
from scorelab.schedules import cas_constants, geometric_schedule, sigma1_from_data

X0 = np.array([0.5, -1.0])
DIRAC = AnalyticScore(GaussianMixture.dirac(X0))


class TestEds:
    def test_dirac(self):
        x = np.random.default_rng(0).normal(size=(10, 2)) * 5
        np.testing.assert_allclose(eds(DIRAC, x, 0.7), np.tile(X0, (10, 1)), rtol=1e-13, atol=1e-14)

    def test_conjugate(self):
        model = AnalyticScore(GaussianMixture([1.0], [[0.0, 0.0]], tau2=1.0))
        x = np.array([[1.0, -3.0]])
        np.testing.assert_allclose(eds(model, x, 1.0), x / 2, rtol=1e-15)

    def test_equals_posterior_mean(self):
        mix = analytic.grid25_mixture()
        rng = np.random.default_rng(1)
        x = rng.uniform(-5, 5, size=(200, 2))
        sig = np.exp(rng.uniform(np.log(0.01), np.log(10), size=200))
        np.testing.assert_allclose(eds(AnalyticScore(mix), x, sig), analytic.posterior_mean(mix, x, sig), rtol=1e-10, atol=1e-12)

    def test_net_score_matches_parametrisation(self):
        net = Mlp([2, 8, 2], seed=0)
        x = np.array([[0.1, 0.2], [1.0, -1.0]])
        s = NetScore(net)
        np.testing.assert_allclose(eds(s, x, 0.5), x + 0.5 * net(x), rtol=1e-14)
        c = NetScore(Mlp([3, 8, 2], seed=0), conditional=True)
        inp = np.c_[x, np.full(2, math.log(0.5))]
        np.testing.assert_allclose(c(x, 0.5), c.net(inp) / 0.5, rtol=1e-14)


class TestDenoiseFinal:
    def test_dirac(self):
        x = np.random.default_rng(2).normal(size=(50, 2))
        np.testing.assert_allclose(denoise_final(DIRAC, x, 0.01), np.tile(X0, (50, 1)), atol=1e-14)

    def test_not_idempotent(self):
        model = AnalyticScore(GaussianMixture([1.0], [[0.0, 0.0]], tau2=1.0))
        x = np.array([[2.0, 2.0]])
        once = denoise_final(model, x, 1.0)
        twice = denoise_final(model, once, 1.0)
        assert not np.allclose(once, twice)


class TestAls:
    def test_zero_model_one_step(self):
        s = geometric_schedule(2.0, 2.0, 1)
        rng = ChainRNG(11, n_chains=5)
        x0 = np.zeros((5, 3))
        eps = 0.3
        out = als_sample(ZeroScore(3), s, eps, 1, x0, rng)
        np.testing.assert_array_equal(out, math.sqrt(2 * eps) * rng.step_noise(0, 3))

    def test_step_count_and_callback(self):
        s = geometric_schedule(5, 0.5, 4)
        rec = NoiseRecorder(X0)
        als_sample(DIRAC, s, 0.05, 3, np.tile(X0, (4, 1)), ChainRNG(0, n_chains=4), rec)
        steps, levels, sigmas, _ = rec.as_arrays()
        assert steps.tolist() == list(range(12))
        assert levels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]

    def test_eta_one_exact(self):
        s = geometric_schedule(4.0, 0.5, 4)
        rng = ChainRNG(3, n_chains=6)
        eps = s.sigmaL**2
        xs = []
        als_sample(DIRAC, s, eps, 2, np.zeros((6, 2)), rng, lambda k, i, sg, x: xs.append(x.copy()))
        for k, x in enumerate(xs):
            sigma = s.sigmas[k // 2]
            np.testing.assert_allclose(x, X0 + math.sqrt(2) * sigma * rng.step_noise(k, 2), rtol=1e-12, atol=1e-12)

    def test_eta_one_monte_carlo(self):
        s = geometric_schedule(3.0, 0.3, 5)
        n = 10_000
        rec = NoiseRecorder(X0)
        als_sample(DIRAC, s, s.sigmaL**2, 1, np.tile(X0, (n, 1)), ChainRNG(5, n_chains=n), rec)
        _, _, sig, std = rec.as_arrays()
        target = math.sqrt(2) * sig
        assert np.all(np.abs(std - target) < 3 * std_standard_error(target, 2 * n))

    def test_noise_above_schedule(self):
        s = geometric_schedule(10.0, 0.1, 20)
        n, eta = 10_000, 0.1
        rec = NoiseRecorder(X0)
        rng = ChainRNG(7, n_chains=n)
        init = initial_samples(s, rng, 2, "data", X0, sigma0=s.sigma1)
        als_sample(DIRAC, s, eta * s.sigmaL**2, 2, init, rng, rec)
        _, _, sig, std = rec.as_arrays()
        trace = als_trace(s, eta, 2, s.sigma1)
        se = std_standard_error(trace.v, 2 * n)
        assert np.all(np.abs(std - trace.v) < 3 * se)
        assert np.all(std > sig)

    def test_divergence(self):
        s = geometric_schedule(1.0, 0.1, 3)
        with pytest.raises(DivergenceError) as err:
            als_sample(DIRAC, s, 5.0 * s.sigmaL**2, 20, np.zeros((2, 2)), ChainRNG(0, n_chains=2))
        assert err.value.step is not None

    def test_bad_arguments(self):
        s = geometric_schedule(1.0, 0.1, 3)
        with pytest.raises(ConfigError):
            als_sample(DIRAC, s, 0.0, 1, np.zeros((1, 2)), ChainRNG(0, n_chains=1))
        with pytest.raises(ConfigError):
            als_sample(DIRAC, s, 0.001, 0, np.zeros((1, 2)), ChainRNG(0, n_chains=1))


class TestCas:
    def test_zero_model_single_level(self):
        s = geometric_schedule(1.0, 1.0, 1)
        x = np.random.default_rng(0).normal(size=(4, 2))
        out = cas_sample(ZeroScore(2), s, 1.0, x, ChainRNG(0, n_chains=4))
        np.testing.assert_array_equal(out, x)

    def test_eta_one_exact(self):
        s = geometric_schedule(8.0, 0.5, 6)
        rng = ChainRNG(4, n_chains=5)
        xs = []
        cas_sample(DIRAC, s, s.sigmaL**2, np.zeros((5, 2)), rng, lambda k, i, sg, x: xs.append(x.copy()))
        assert len(xs) == s.L
        for i, x in enumerate(xs):
            np.testing.assert_allclose(x, X0 + s.next_sigma(i) * rng.step_noise(i, 2), rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(xs[-1], np.tile(X0, (5, 1)), atol=1e-14)

    @pytest.mark.parametrize("eta", [0.3, 0.7])
    def test_consistent_noise_monte_carlo(self, eta):
        s = geometric_schedule(10.0, 0.05, 30)
        n = 10_000
        rng = ChainRNG(9, n_chains=n)
        init = initial_samples(s, rng, 2, "data", X0, sigma0=s.sigma1)
        rec = NoiseRecorder(X0)
        cas_sample(DIRAC, s, eta * s.sigmaL**2, init, rng, rec)
        expected = cas_entering_stds(s, eta, s.sigma1)[1:]
        _, _, _, std = rec.as_arrays()
        np.testing.assert_allclose(expected[:-1], s.sigmas[1:], rtol=1e-12)
        # 30 correlated comparisons; 4 standard errors keeps the family-wise false alarm rate small
        assert np.all(np.abs(std - expected) < 4 * std_standard_error(expected, 2 * n))

    def test_step_too_small(self):
        s = geometric_schedule(1.0, 0.5, 2)
        with pytest.raises(StepTooSmallError):
            cas_sample(DIRAC, s, 0.1 * 0.25, np.zeros((1, 2)), ChainRNG(0, n_chains=1))


class TestInterpolationForm:
    def test_eta_one(self):
        model = AnalyticScore(analytic.grid25_mixture())
        x = np.array([[0.3, 1.1]])
        z = np.array([[0.2, -0.4]])
        h = eds(model, x, 0.5)
        np.testing.assert_allclose(interpolation_step(model, x, 0.5, 0.4, 1.0, "als", z), h + math.sqrt(2) * 0.5 * z)
        np.testing.assert_allclose(interpolation_step(model, x, 0.5, 0.4, 1.0, "cas", z, beta=0.3), h + 0.3 * 0.4 * z)

    def test_eta_zero_identity(self):
        model = AnalyticScore(analytic.grid25_mixture())
        x = np.array([[0.3, 1.1]])
        np.testing.assert_array_equal(interpolation_step(model, x, 0.5, 0.4, 0.0, "als", np.zeros((1, 2))), x)

    @pytest.mark.parametrize("variant", ["als", "cas"])
    def test_matches_direct_step(self, variant):
        rng = np.random.default_rng(12)
        mix = analytic.grid25_mixture()
        models = [AnalyticScore(mix), NetScore(Mlp([2, 16, 2], seed=1)), AnalyticScore(GaussianMixture.dirac(X0))]
        worst = 0.0
        for k in range(1000):
            model = models[k % 3]
            sched = geometric_schedule(rng.uniform(2, 20), rng.uniform(0.01, 0.5), int(rng.integers(2, 100)))
            i = int(rng.integers(0, sched.L))
            eta = rng.uniform(1 - sched.gamma, 1.0)
            c = cas_constants(sched, eta * sched.sigmaL**2)
            x = rng.normal(size=(1, 2)) * 3
            z = rng.normal(size=(1, 2))
            a = direct_step(model, x, sched[i], sched.next_sigma(i), c.epsilon, sched.sigmaL, variant, z, c.beta)
            b = interpolation_step(model, x, sched[i], sched.next_sigma(i), c.eta, variant, z, c.beta)
            worst = max(worst, float(np.abs(a - b).max() / np.abs(a).max()))
        assert worst < 1e-10


class TestRunner:
    def test_chain_order_independence(self):
        s = geometric_schedule(5.0, 0.1, 10)
        model = AnalyticScore(analytic.grid25_mixture())
        full_rng = ChainRNG(21, n_chains=12)
        full = cas_sample(model, s, 0.5 * s.sigmaL**2, initial_samples(s, full_rng, 2), full_rng)
        idx = np.array([11, 3, 7])
        sub_rng = full_rng.subset(idx)
        sub = cas_sample(model, s, 0.5 * s.sigmaL**2, initial_samples(s, sub_rng, 2), sub_rng)
        # rows are computed independently; only SIMD summation order may differ
        np.testing.assert_allclose(sub, full[idx], rtol=1e-13, atol=1e-13)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SampleRunConfig(variant="sgld")
        with pytest.raises(ConfigError):
            SampleRunConfig(init="zeros")
        with pytest.raises(ConfigError):
            SampleRunConfig(epsilon=-1)

    def test_cas_dilates(self):
        s = geometric_schedule(5.0, 0.1, 4)
        rec = TrajectoryRecorder(np.arange(3))
        cfg = SampleRunConfig(variant="cas", epsilon=0.5 * 0.01, n_sigma=3, n_chains=3, denoise=False)
        run_sampler(DIRAC, s, cfg, callback=rec)
        assert len({r[0] for r in rec.rows}) == (4 - 1) * 3 + 1
        assert rec.rows[0][:2] == (0, 0) and len(rec.rows[0]) == 4

    def test_denoise_flag(self):
        s = geometric_schedule(5.0, 0.1, 4)
        cfg = SampleRunConfig(variant="als", epsilon=0.002, n_sigma=2, n_chains=20, denoise=True)
        out, raw = run_sampler(DIRAC, s, cfg)
        np.testing.assert_allclose(out, np.tile(X0, (20, 1)), atol=1e-12)
        assert not np.allclose(raw, out)

    def test_pure_noise_init_equivalence(self):
        """Starting far out at sigma_1 = data diameter loses the memory of the start."""
        mix = analytic.grid25_mixture()
        centers = analytic.grid25_centers()
        s = geometric_schedule(sigma1_from_data(centers), 0.01, 60)
        model = AnalyticScore(mix)
        n = 3000
        data = analytic.gen_grid25(n, seed=30).points
        out = {}
        for mode, seed in (("noise", 1), ("data", 2)):
            cfg = SampleRunConfig("cas", 0.5 * s.sigmaL**2, 1, True, mode, n, seed)
            out[mode] = run_sampler(model, s, cfg, data=data)[0]
        d = {k: np.sqrt(((v[:, None] - centers[None]) ** 2).sum(-1)).min(1) for k, v in out.items()}
        se = math.sqrt(d["noise"].var() / n + d["data"].var() / n)
        assert abs(d["noise"].mean() - d["data"].mean()) < 3 * se
        ed = metrics.energy_distance(out["noise"], out["data"])
        pooled = np.vstack([out["noise"], out["data"]])
        rng = np.random.default_rng(0)
        null = []
        for _ in range(30):
            p = rng.permutation(2 * n)
            null.append(metrics.energy_distance(pooled[p[:n]], pooled[p[n:]]))
        assert ed <= max(null)


class TestUnconditionalAnalytic:
    def test_dirac_matches_scaled_conditional(self):
        s = geometric_schedule(4.0, 0.25, 5)
        model = AnalyticUnconditionalScore(GaussianMixture.dirac(X0), s)
        x = np.array([[1.0, 1.0]])
        inv_bar = np.mean(1.0 / s.sigmas)
        for sig in s:
            np.testing.assert_allclose(model(x, sig), (X0 - x) * inv_bar / sig, rtol=1e-12)


def test_residual_std():
    x = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert residual_std(x, [0.0, 0.0]) == pytest.approx(math.sqrt(0.5))


class TestMonteCarloCalibration:
    """Per-step z-scores of the Dirac noise measurement should be standard normal."""

    def test_z_scores_standard_normal_over_seeds(self):
        from scipy import stats

        s = geometric_schedule(50.0, 0.01, 50)
        n = 10_000
        target = np.r_[s.sigmas[1:], 0.5 * s.sigmaL]
        zs = []
        for seed in range(20):
            rng = ChainRNG(100 + seed, n_chains=n)
            init = initial_samples(s, rng, 2, "data", X0, sigma0=s.sigma1)
            rec = NoiseRecorder(X0)
            cas_sample(DIRAC, s, 0.5 * s.sigmaL**2, init, rng, rec)
            zs.append((rec.as_arrays()[3] - target) / std_standard_error(target, 2 * n))
        z = np.concatenate(zs)
        assert abs(z.mean()) < 4 / math.sqrt(z.size)
        assert stats.kstest(z, "norm").pvalue > 1e-3
        # 1000 draws: about 2.7 expected beyond 3 standard errors
        assert (np.abs(z) > 3).sum() <= 10
