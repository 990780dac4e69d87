"""Annealed Langevin sampling (ALS), consistent annealed sampling (CAS),
expected denoised samples and final-step denoising over any score model.

Chains are rows of an (n_chains, d) array. Noise for chain ``c`` at global
step ``k`` is drawn from a counter-based stream keyed by (seed, c, k), so a
chain's trajectory does not depend on which other chains run with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scorelab import analytic
from scorelab.errors import ConfigError, DivergenceError
from scorelab.rng import ChainRNG
from scorelab.schedules import NoiseSchedule, cas_constants, dilate

DIVERGENCE_FACTOR = 1e6


# score models -------------------------------------------------------------------


class ScoreModel:
    """Evaluates s(x, sigma) on a batch. Subclasses set ``dim``."""

    conditional = True
    dim: int

    def evaluate(self, x, sigma):
        raise NotImplementedError

    def __call__(self, x, sigma):
        return self.evaluate(x, sigma)


class ZeroScore(ScoreModel):
    def __init__(self, dim: int):
        self.dim = dim

    def evaluate(self, x, sigma):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


class AnalyticScore(ScoreModel):
    """Exact noise-conditional score of a Gaussian mixture."""

    def __init__(self, mix: analytic.GaussianMixture):
        self.mix = mix
        self.dim = mix.dim

    def evaluate(self, x, sigma):
        return analytic.optimal_conditional_score(self.mix, x, sigma)


class AnalyticUnconditionalScore(ScoreModel):
    """Best score an unconditional network s(x)/sigma can reach for a schedule."""

    conditional = False

    def __init__(self, mix: analytic.GaussianMixture, schedule: NoiseSchedule):
        self.mix = mix
        self.schedule = schedule
        self.dim = mix.dim

    def evaluate(self, x, sigma):
        s = analytic.optimal_unconditional_score(self.mix, x, self.schedule)
        sigma = np.asarray(sigma, dtype=np.float64)
        return s / (sigma[:, None] if sigma.ndim else sigma)


class NetScore(ScoreModel):
    """Score from an MLP: s(x, sigma) = f(x) / sigma, or f([x, log sigma]) / sigma
    when conditional."""

    def __init__(self, net, conditional: bool = False, params=None):
        self.net = net
        self.conditional = conditional
        self.params = params
        self.dim = net.out_dim
        expected = self.dim + (1 if conditional else 0)
        if net.in_dim != expected:
            raise ValueError(f"network input width {net.in_dim} != {expected}")

    def net_input(self, x, sigma):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if not self.conditional:
            return x
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
        return np.concatenate([x, np.log(sigma)[:, None]], axis=1)

    def evaluate(self, x, sigma):
        single = np.ndim(x) == 1
        out = self.net.forward(self.net_input(x, sigma), params=self.params)
        sigma = np.asarray(sigma, dtype=np.float64)
        out = out / (sigma[:, None] if sigma.ndim else sigma)
        return out[0] if single else out


# samplers --------------------------------------------------------------------------


def eds(model: ScoreModel, x, sigma):
    """Expected denoised sample H(x, sigma) = x + sigma^2 s(x, sigma)."""
    x = np.asarray(x, dtype=np.float64)
    sigma_arr = np.asarray(sigma, dtype=np.float64)
    s2 = sigma_arr**2
    if sigma_arr.ndim and x.ndim == 2:
        s2 = s2[:, None]
    return model(x, sigma) * s2 + x


def denoise_final(model: ScoreModel, samples, sigma_L: float):
    """Replace each sample by its EDS at the smallest noise level. Not idempotent."""
    return eds(model, samples, sigma_L)


def initial_samples(
    schedule: NoiseSchedule,
    rng: ChainRNG,
    dim: int,
    mode: str = "noise",
    data=None,
    sigma0: float | None = None,
):
    """Starting points: pure noise N(0, sigma0^2 I) or data + sigma0 noise.

    ``sigma0`` defaults to sigma_1 / gamma. In data mode chain c starts from
    data[c % len(data)].
    """
    if sigma0 is None:
        sigma0 = schedule.sigma1 / schedule.gamma
    z = rng.init_noise(dim)
    if mode == "noise":
        return sigma0 * z
    if mode == "data":
        if data is None:
            raise ConfigError("data-plus-noise initialisation needs data")
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        return data[rng.chains % data.shape[0]] + sigma0 * z
    raise ConfigError(f"unknown init mode {mode!r}")


def _guard(x, limit, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite sample at step {step}", step=step)
    norm = float(np.sqrt((x * x).sum(axis=-1)).max())
    if norm > limit:
        raise DivergenceError(f"sample norm {norm:.3g} exceeds {limit:.3g} at step {step}", step=step)


def als_sample(
    model: ScoreModel,
    schedule: NoiseSchedule,
    epsilon: float,
    n_sigma: int,
    x_init,
    rng: ChainRNG,
    callback=None,
):
    """Algorithm: for each level i, n_sigma Langevin steps with
    alpha_i = epsilon sigma_i^2 / sigma_L^2.

    ``callback(step, level, sigma, x)`` runs after every update.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if n_sigma < 1:
        raise ConfigError("n_sigma must be at least 1")
    x = np.array(x_init, dtype=np.float64)
    d = x.shape[1]
    limit = DIVERGENCE_FACTOR * schedule.sigma1
    sL2 = schedule.sigmaL**2
    step = 0
    for i, sigma in enumerate(schedule.sigmas):
        alpha = epsilon * sigma**2 / sL2
        noise_scale = math.sqrt(2.0 * alpha)
        for _ in range(n_sigma):
            z = rng.step_noise(step, d)
            x = x + alpha * model(x, sigma) + noise_scale * z
            _guard(x, limit, step)
            if callback is not None:
                callback(step, i, sigma, x)
            step += 1
    return x


def cas_sample(
    model: ScoreModel,
    schedule: NoiseSchedule,
    epsilon: float,
    x_init,
    rng: ChainRNG,
    callback=None,
):
    """One step per level; noise scale beta sigma_{i+1} with sigma_{L+1} = 0.

    Several steps per level are obtained by passing a dilated schedule.
    """
    consts = cas_constants(schedule, epsilon)
    x = np.array(x_init, dtype=np.float64)
    d = x.shape[1]
    limit = DIVERGENCE_FACTOR * schedule.sigma1
    sL2 = schedule.sigmaL**2
    for i, sigma in enumerate(schedule.sigmas):
        alpha = epsilon * sigma**2 / sL2
        z = rng.step_noise(i, d)
        x = x + alpha * model(x, sigma) + consts.beta * schedule.next_sigma(i) * z
        _guard(x, limit, i)
        if callback is not None:
            callback(i, i, sigma, x)
    return x


def direct_step(model, x, sigma_i, sigma_next, epsilon, sigma_L, variant, z, beta=None):
    """A single update written as in the sampling algorithms."""
    alpha = epsilon * sigma_i**2 / sigma_L**2
    if variant == "als":
        return x + alpha * model(x, sigma_i) + math.sqrt(2.0 * alpha) * z
    if variant == "cas":
        return x + alpha * model(x, sigma_i) + beta * sigma_next * z
    raise ConfigError(f"unknown variant {variant!r}")


def interpolation_step(model, x, sigma_i, sigma_next, eta, variant, z, beta=None):
    """The same update as a move toward the EDS:
    (1 - eta) x + eta H(x, sigma_i) + noise."""
    h = eds(model, x, sigma_i)
    base = (1.0 - eta) * x + eta * h
    if variant == "als":
        return base + math.sqrt(2.0 * eta) * sigma_i * z
    if variant == "cas":
        if beta is None:
            raise ConfigError("the consistent update needs beta")
        return base + beta * sigma_next * z
    raise ConfigError(f"unknown variant {variant!r}")


# noise measurement -------------------------------------------------------------


def residual_std(x, x0) -> float:
    """Root-mean-square of the noise component x - x0 over chains and coordinates."""
    r = np.asarray(x) - np.asarray(x0)
    return float(np.sqrt(np.mean(r * r)))


def std_standard_error(sigma: float, n: int) -> float:
    """Standard error of the known-mean RMS estimate of a Gaussian std from n draws."""
    return sigma / math.sqrt(2.0 * n)


class NoiseRecorder:
    """Callback that records residual noise std against a fixed clean point."""

    def __init__(self, x0):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.steps, self.levels, self.sigmas, self.stds = [], [], [], []

    def __call__(self, step, level, sigma, x):
        self.steps.append(step)
        self.levels.append(level)
        self.sigmas.append(sigma)
        self.stds.append(residual_std(x, self.x0))

    def as_arrays(self):
        return (
            np.array(self.steps),
            np.array(self.levels),
            np.array(self.sigmas),
            np.array(self.stds),
        )


class TrajectoryRecorder:
    """Keeps (step, chain, coords) rows for a trajectory dump."""

    def __init__(self, chains, every: int = 1):
        self.chains = np.asarray(chains)
        self.every = max(1, int(every))
        self.rows = []

    def __call__(self, step, level, sigma, x):
        if step % self.every:
            return
        for c, row in zip(self.chains, x):
            self.rows.append((step, int(c), *row.tolist()))


# run configuration --------------------------------------------------------------


@dataclass
class SampleRunConfig:
    variant: str = "cas"
    epsilon: float = 1e-5
    n_sigma: int = 1
    denoise: bool = True
    init: str = "noise"
    n_chains: int = 2600
    seed: int = 0
    sigma0: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("als", "cas"):
            raise ConfigError(f"variant must be 'als' or 'cas', got {self.variant!r}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.n_sigma < 1:
            raise ConfigError("n_sigma must be at least 1")
        if self.init not in ("noise", "data"):
            raise ConfigError(f"init must be 'noise' or 'data', got {self.init!r}")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be at least 1")


def run_sampler(model: ScoreModel, schedule: NoiseSchedule, cfg: SampleRunConfig, data=None, callback=None):
    """Initialise, sample and optionally denoise. Returns (samples, raw samples)."""
    rng = ChainRNG(cfg.seed, n_chains=cfg.n_chains)
    if cfg.variant == "cas":
        sched = dilate(schedule, cfg.n_sigma)
    else:
        sched = schedule
    x0 = initial_samples(sched, rng, model.dim, cfg.init, data, cfg.sigma0)
    if cfg.variant == "cas":
        raw = cas_sample(model, sched, cfg.epsilon, x0, rng, callback)
    else:
        raw = als_sample(model, sched, cfg.epsilon, cfg.n_sigma, x0, rng, callback)
    out = denoise_final(model, raw, sched.sigmaL) if cfg.denoise else raw
    return out, raw
