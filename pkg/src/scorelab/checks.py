"""Self-check battery: every closed-form identity re-run with fresh random inputs.

Each check returns a ``CheckResult`` carrying the measured error next to the
tolerance it was held to. ``run_checks`` executes the battery; the CLI turns a
single failure into a nonzero exit.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from unittest import mock

import numpy as np

from scorelab import analytic, noisetrace, schedules
from scorelab.analytic import GaussianMixture
from scorelab.experiments import dirac_noise_run
from scorelab.nn import Mlp, gradient_error, numerical_gradient
from scorelab.noisetrace import als_level_closed_form, als_stationary_std, als_trace, cas_trace
from scorelab.sampler import AnalyticScore, NetScore, direct_step, eds, interpolation_step
from scorelab.schedules import cas_constants, dilate, geometric_schedule
from scorelab.training import draw_batch, dsm_loss, hybrid_g_loss, lsgan_d_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def to_dict(self):
        return asdict(self)


def random_cas_config(rng):
    sigma1 = float(np.exp(rng.uniform(0.0, np.log(200.0))))
    ratio = float(np.exp(rng.uniform(np.log(1e-5), np.log(0.5))))
    sched = geometric_schedule(sigma1, sigma1 * ratio, int(rng.integers(2, 800)))
    eta = float(rng.uniform(1.0 - sched.gamma, 1.0))
    return sched, eta


def check_cas_exactness(seed=0, n_configs=100, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        sched, eta = random_cas_config(rng)
        dev = np.abs(cas_trace(sched, eta).v - sched.sigmas).max() / sched.sigma1
        worst = max(worst, float(dev))
    return CheckResult("cas_exactness", worst < tol, worst, tol, detail="max |v_t - sigma_t| / sigma_1")


def check_mutation_canary(seed=0):
    """A slightly wrong beta must make the exactness check fail."""

    def corrupted(schedule, epsilon):
        c = cas_constants(schedule, epsilon)
        return schedules.SamplerConstants(c.epsilon, c.eta, c.beta * (1.0 + 1e-6))

    with mock.patch.object(noisetrace, "cas_constants", corrupted):
        mutant = check_cas_exactness(seed, n_configs=20)
    return CheckResult("mutation_canary", not mutant.passed, mutant.measured, mutant.tolerance,
                       detail="exactness error under a 1e-6 relative corruption of beta (must exceed tolerance)")


def check_als_closed_form(seed=1, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        sigma = float(rng.uniform(0.01, 50))
        eta = float(rng.uniform(0.001, 0.999))
        v0 = float(rng.uniform(0.01, 100))
        n = int(rng.integers(1, 400))
        tr = als_trace(geometric_schedule(sigma, sigma, 1), eta, n, v0)
        ref = als_level_closed_form(v0, sigma, eta, np.arange(1, n + 1))
        worst = max(worst, float(np.max(np.abs(tr.v - ref) / ref)))
    return CheckResult("als_closed_form", worst < tol, worst, tol, detail="relative error vs closed form")


def check_als_limit(tol=1e-6):
    tr = als_trace(geometric_schedule(1.0, 1.0, 1), 0.1, 500, 1.0)
    err = abs(tr.v[-1] - als_stationary_std(1.0, 0.1))
    return CheckResult("als_limit", err < tol, err, tol, detail="500 steps at sigma=1, eta=0.1")


def check_cas_monte_carlo(seed=2, n_chains=4000, z_max=4.0):
    m = dirac_noise_run("cas", geometric_schedule(20.0, 0.05, 25), 0.5, 1, n_chains, seed)
    worst = float(np.abs(m.z_scores).max())
    return CheckResult("cas_monte_carlo", worst < z_max, worst, z_max, detail="max |z| over steps")


def check_als_monte_carlo(seed=3, n_chains=4000, z_max=4.0):
    worst, above = 0.0, True
    for n_sigma in (1, 3):
        m = dirac_noise_run("als", geometric_schedule(20.0, 0.05, 15), 0.2, n_sigma, n_chains, seed)
        worst = max(worst, float(np.abs(m.z_scores).max()))
        above &= bool(np.all(m.measured > m.sigma))
    return CheckResult("als_monte_carlo", worst < z_max and above, worst, z_max,
                       detail="max |z| vs recurrence; measured std above sigma everywhere: " + str(above))


def check_update_equivalence(seed=4, n=1000, tol=1e-10):
    rng = np.random.default_rng(seed)
    models = [AnalyticScore(analytic.grid25_mixture()), NetScore(Mlp([2, 16, 2], seed=seed))]
    worst = 0.0
    for k in range(n):
        sched, eta = random_cas_config(rng)
        c = cas_constants(sched, eta * sched.sigmaL**2)
        i = int(rng.integers(0, sched.L))
        x = rng.normal(size=(1, 2)) * 3
        z = rng.normal(size=(1, 2))
        variant = ("als", "cas")[k % 2]
        model = models[(k // 2) % 2]
        a = direct_step(model, x, sched[i], sched.next_sigma(i), c.epsilon, sched.sigmaL, variant, z, c.beta)
        b = interpolation_step(model, x, sched[i], sched.next_sigma(i), c.eta, variant, z, c.beta)
        worst = max(worst, float(np.abs(a - b).max() / np.abs(a).max()))
    return CheckResult("update_equivalence", worst < tol, worst, tol, detail="relative deviation")


def check_score_finite_difference(seed=5, tol=1e-5, h=1e-5):
    rng = np.random.default_rng(seed)
    mix = analytic.grid25_mixture(tau=0.3)
    x = rng.uniform(-5, 5, size=(200, 2))
    sig = np.exp(rng.uniform(np.log(0.1), np.log(5.0), size=200))
    score = analytic.optimal_conditional_score(mix, x, sig)
    fd = np.empty_like(x)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (analytic.smoothed_log_density(mix, x + e, sig) - analytic.smoothed_log_density(mix, x - e, sig)) / (2 * h)
    err = float((np.linalg.norm(score - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-3)).max())
    return CheckResult("score_finite_difference", err < tol, err, tol, detail="relative error, 200 points")


def check_unconditional_dirac(seed=6, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst, pattern = 0.0, True
    for _ in range(20):
        x0 = rng.normal(size=2)
        sched = geometric_schedule(float(rng.uniform(1, 100)), float(rng.uniform(0.001, 0.5)), int(rng.integers(2, 100)))
        x = x0 + rng.normal(size=(1, 2)) * 3
        su = analytic.optimal_unconditional_score(GaussianMixture.dirac(x0), x, sched)
        sig_bar = 1.0 / np.mean(1.0 / sched.sigmas)
        for s in sched:
            recon = su / s
            expected = (x0 - x) / (sig_bar * s)
            worst = max(worst, float(np.abs(recon - expected).max() / np.abs(expected).max()))
            ratio = float((recon / ((x0 - x) / s**2))[0, 0])
            if s > sig_bar * (1 + 1e-9):
                pattern &= ratio > 1
            elif s < sig_bar * (1 - 1e-9):
                pattern &= ratio < 1
    return CheckResult("unconditional_dirac", worst < tol and pattern, worst, tol,
                       detail="relative error; overestimate above sigma_bar, underestimate below: " + str(pattern))


def check_eds_identity(seed=7, tol=1e-10):
    rng = np.random.default_rng(seed)
    mix = analytic.grid25_mixture()
    x = rng.uniform(-6, 6, size=(200, 2))
    sig = np.exp(rng.uniform(np.log(0.01), np.log(20), size=200))
    h = eds(AnalyticScore(mix), x, sig)
    pm = analytic.posterior_mean(mix, x, sig)
    err = float((np.abs(h - pm) / np.maximum(np.abs(pm), 1.0)).max())
    return CheckResult("eds_identity", err < tol, err, tol)


def _with_params(net, fn):
    def f(params):
        old = net.params
        net.params = params
        try:
            return fn()
        finally:
            net.params = old

    return f


def check_loss_gradients(seed=8, n_configs=20, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    sched = geometric_schedule(4.0, 0.05, 10)
    for k in range(n_configs):
        d = int(rng.integers(1, 4))
        cond = bool(k % 2)
        hidden = [int(w) for w in rng.integers(2, 6, size=int(rng.integers(1, 3)))]
        score = NetScore(Mlp([d + cond, *hidden, d], seed=seed + k), conditional=cond)
        disc = Mlp([d, *hidden, 1], seed=seed + 1000 + k)
        b = draw_batch(rng, rng.normal(size=(30, d)), sched, 6)
        lam = float(rng.uniform(0, 3))
        fake = eds(score, b.x_noisy, b.sigma)
        pairs = [
            (dsm_loss(score, b)[1], _with_params(score.net, lambda: dsm_loss(score, b)[0]), score.net),
            (lsgan_d_loss(disc, b.x, fake)[1], _with_params(disc, lambda: lsgan_d_loss(disc, b.x, fake)[0]), disc),
            (hybrid_g_loss(score, disc, b, lam)[1],
             _with_params(score.net, lambda: hybrid_g_loss(score, disc, b, lam)[0].total), score.net),
        ]
        for grads, fn, net in pairs:
            worst = max(worst, gradient_error(grads, numerical_gradient(fn, net.params)))
    return CheckResult("loss_gradients", worst < tol, worst, tol, detail="relative error, central differences")


def check_dilation_associativity(seed=9, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(30):
        s = geometric_schedule(float(rng.uniform(1, 100)), float(rng.uniform(0.001, 0.9)), int(rng.integers(2, 60)))
        a, b = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        lhs, rhs = dilate(dilate(s, a), b), dilate(s, a * b)
        if lhs.L != rhs.L:
            return CheckResult("dilation_associativity", False, float("inf"), tol, detail="length mismatch")
        worst = max(worst, float(np.max(np.abs(lhs.sigmas - rhs.sigmas) / rhs.sigmas)))
    return CheckResult("dilation_associativity", worst < tol, worst, tol)


CHECKS = (
    check_cas_exactness,
    check_mutation_canary,
    check_als_closed_form,
    check_als_limit,
    check_cas_monte_carlo,
    check_als_monte_carlo,
    check_update_equivalence,
    check_score_finite_difference,
    check_unconditional_dirac,
    check_eds_identity,
    check_loss_gradients,
    check_dilation_associativity,
)


def run_checks(checks=CHECKS, only=None):
    results = []
    for fn in checks:
        name = fn.__name__.removeprefix("check_")
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        res = fn()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
