"""Reusable experiment drivers: Dirac noise measurements and grid25 runs.

The grid25 driver trains a score network, draws one CAS run and scores both
the raw and the denoised final samples, so the two are paired chain by chain.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from scorelab import analytic, metrics
from scorelab.noisetrace import als_trace, cas_entering_stds
from scorelab.rng import ChainRNG
from scorelab.sampler import (
    AnalyticScore,
    NoiseRecorder,
    SampleRunConfig,
    als_sample,
    cas_sample,
    initial_samples,
    run_sampler,
    std_standard_error,
)
from scorelab.schedules import NoiseSchedule
from scorelab.training import TrainConfig, train_dsm, train_hybrid

GRID25_TAU = 0.05
GRID25_THRESHOLD = 3 * GRID25_TAU


@dataclass
class NoiseMeasurement:
    """Per-update residual noise std of a Dirac run next to its prediction."""

    step: np.ndarray
    sigma: np.ndarray  # level used by the update
    measured: np.ndarray
    predicted: np.ndarray
    stderr: np.ndarray

    @property
    def z_scores(self) -> np.ndarray:
        return (self.measured - self.predicted) / self.stderr


def dirac_noise_run(
    variant: str,
    schedule: NoiseSchedule,
    eta: float,
    n_sigma: int = 1,
    n_chains: int = 10_000,
    seed: int = 0,
    x0=(0.0, 0.0),
    sigma0: float | None = None,
) -> NoiseMeasurement:
    """Sample a point mass with its exact score from x0 + sigma0 noise.

    ``sigma0`` defaults to sigma_1. The CAS prediction after update t is the
    next level sigma_{t+1} (and (1 - eta) sigma_L after the last update); the
    ALS prediction is the variance recurrence.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    sigma0 = schedule.sigma1 if sigma0 is None else sigma0
    model = AnalyticScore(analytic.GaussianMixture.dirac(x0))
    rng = ChainRNG(seed, n_chains=n_chains)
    init = initial_samples(schedule, rng, x0.size, "data", x0, sigma0=sigma0)
    rec = NoiseRecorder(x0)
    epsilon = eta * schedule.sigmaL**2
    if variant == "cas":
        cas_sample(model, schedule, epsilon, init, rng, rec)
        predicted = cas_entering_stds(schedule, eta, sigma0)[1:]
    elif variant == "als":
        als_sample(model, schedule, epsilon, n_sigma, init, rng, rec)
        predicted = als_trace(schedule, eta, n_sigma, sigma0).v
    else:
        raise ValueError(f"unknown variant {variant!r}")
    step, _, sigma, measured = rec.as_arrays()
    return NoiseMeasurement(step, sigma, measured, predicted, std_standard_error(predicted, n_chains * x0.size))


# Weight of the score-matching term in the 2-D hybrid runs. lam = 1 on 32x32x3 images sums the
# squared residual over 3072 coordinates; keeping the same balance against the scalar adversarial
# term with 2 coordinates gives 3072 / 2.
HYBRID_LAM_2D = 1536.0


def grid25_train_config(adversarial: bool = False, **overrides) -> TrainConfig:
    """Settings used for the 2-D mixture experiments (unconditional net, 20k steps, batch 128)."""
    base = dict(iterations=20_000, batch_size=128, sigmaL=0.01, L=50, score_lr=3e-3, conditional=False,
                ema=0.999, seed=0, lam=HYBRID_LAM_2D if adversarial else 1.0, n_d=1)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class SampleScores:
    mode: metrics.ModeReport
    mode_raw: metrics.ModeReport
    distance: float  # mean nearest-mode distance after denoising
    distance_raw: float
    energy: float  # energy distance of the denoised samples to held-out data
    energy_raw: float
    seconds: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.to_dict(),
            "mode_raw": self.mode_raw.to_dict(),
            "distance": self.distance,
            "distance_raw": self.distance_raw,
            "energy": self.energy,
            "energy_raw": self.energy_raw,
            "seconds": self.seconds,
        }


def score_samples(model, schedule, reference, centers, eta=0.5, n_sigma=1, n_chains=2600, seed=0,
                  threshold=GRID25_THRESHOLD) -> SampleScores:
    """One CAS run; raw and denoised outputs share every chain and noise draw."""
    t0 = time.perf_counter()
    cfg = SampleRunConfig("cas", eta * schedule.sigmaL**2, n_sigma, True, "noise", n_chains, seed)
    out, raw = run_sampler(model, schedule, cfg)
    return SampleScores(
        mode=metrics.mode_coverage(out, centers, threshold),
        mode_raw=metrics.mode_coverage(raw, centers, threshold),
        distance=metrics.mean_nearest_mode_distance(out, centers),
        distance_raw=metrics.mean_nearest_mode_distance(raw, centers),
        energy=metrics.energy_distance(out, reference),
        energy_raw=metrics.energy_distance(raw, reference),
        seconds=time.perf_counter() - t0,
    )


@dataclass
class Grid25Run:
    adversarial: bool
    scores: SampleScores
    train_seconds: float
    final_dsm_loss: float
    config: dict = field(default_factory=dict)


def grid25_run(adversarial: bool = False, cfg: TrainConfig | None = None, n_train: int = 10_000,
               data_seed: int = 1, eta: float = 0.5, n_sigma: int = 1, n_chains: int = 2600,
               sample_seed: int = 3) -> Grid25Run:
    cfg = cfg or grid25_train_config(adversarial)
    data = analytic.gen_grid25(n_train, tau=GRID25_TAU, seed=data_seed).points
    reference = analytic.gen_grid25(n_chains, tau=GRID25_TAU, seed=data_seed + 1).points
    trainer = train_hybrid if adversarial else train_dsm
    t0 = time.perf_counter()
    state, report = trainer(cfg, data)
    train_seconds = time.perf_counter() - t0
    scores = score_samples(state.sampling_model(), state.schedule, reference, analytic.grid25_centers(),
                           eta, n_sigma, n_chains, sample_seed)
    final = report.dsm_loss[-1] if report.dsm_loss else float("nan")
    return Grid25Run(adversarial, scores, train_seconds, final, cfg.to_dict())
