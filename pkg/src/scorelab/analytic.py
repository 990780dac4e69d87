"""Closed-form isotropic Gaussian mixtures: smoothed densities, optimal scores,
posterior means, plus the synthetic 2-D datasets.

All batch functions take ``x`` with shape (n, d) (a single vector is promoted)
and ``sigma`` as a scalar or an (n,) array of per-row noise levels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from scorelab.errors import DegenerateDensityError, InvalidSizeError


@dataclass(frozen=True)
class GaussianMixture:
    """sum_k w_k N(mu_k, tau2 I). ``tau2 = 0`` gives a weighted Dirac mixture."""

    weights: np.ndarray
    means: np.ndarray
    tau2: float = 0.0

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[None, :]
        if mu.ndim != 2 or mu.shape[0] != w.shape[0]:
            raise ValueError(f"means shape {mu.shape} does not match {w.shape[0]} weights")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if self.tau2 < 0:
            raise ValueError("tau2 must be non-negative")
        for arr in (w, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "tau2", float(self.tau2))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    @classmethod
    def dirac(cls, x0) -> "GaussianMixture":
        return cls(np.ones(1), np.atleast_1d(np.asarray(x0, dtype=np.float64))[None, :], 0.0)

    @classmethod
    def uniform(cls, means, tau2=0.0) -> "GaussianMixture":
        means = np.asarray(means, dtype=np.float64)
        k = means.shape[0]
        return cls(np.full(k, 1.0 / k), means, tau2)


def _prep(mix: GaussianMixture, x, sigma):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != mix.dim:
        raise ValueError(f"x has dimension {x.shape[1]}, mixture has {mix.dim}")
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim == 0:
        sigma = np.full(x.shape[0], float(sigma))
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    return x, sigma, single


def _log_resp(mix, x, s2):
    """Unnormalized log responsibilities, shape (n, K)."""
    d2 = ((x[:, None, :] - mix.means[None, :, :]) ** 2).sum(-1)
    return np.log(mix.weights)[None, :] - d2 / (2.0 * s2[:, None])


def _responsibilities(mix, x, s2):
    lr = _log_resp(mix, x, s2)
    lr -= lr.max(axis=1, keepdims=True)
    r = np.exp(lr)
    return r / r.sum(axis=1, keepdims=True)


def _total_var(mix, sigma):
    s2 = mix.tau2 + sigma**2
    if np.any(s2 <= 0):
        raise DegenerateDensityError("sigma = 0 on a Dirac mixture has no density")
    return s2


def smoothed_log_density(mix: GaussianMixture, x, sigma):
    """log q_sigma(x) = log sum_k w_k N(x; mu_k, (tau2 + sigma^2) I)."""
    x, sigma, single = _prep(mix, x, sigma)
    s2 = _total_var(mix, sigma)
    d = mix.dim
    out = logsumexp(_log_resp(mix, x, s2), axis=1) - 0.5 * d * np.log(2.0 * np.pi * s2)
    return float(out[0]) if single else out


def optimal_conditional_score(mix: GaussianMixture, x, sigma):
    """Gradient of the smoothed log density in x."""
    x, sigma, single = _prep(mix, x, sigma)
    s2 = _total_var(mix, sigma)
    r = _responsibilities(mix, x, s2)
    out = (r @ mix.means - x) / s2[:, None]
    return out[0] if single else out


def posterior_mean(mix: GaussianMixture, x, sigma):
    """E[x_clean | x_noisy = x] under Gaussian corruption of std sigma."""
    x, sigma, single = _prep(mix, x, sigma)
    s2 = _total_var(mix, sigma)
    r = _responsibilities(mix, x, s2)
    sig2 = (sigma**2)[:, None]
    out = (mix.tau2 * x + sig2 * (r @ mix.means)) / s2[:, None]
    return out[0] if single else out


def optimal_unconditional_score(mix: GaussianMixture, x, schedule):
    """Minimizer of the DSM loss for a network that outputs s(x) and is scaled
    by 1/sigma at use: the schedule average of (H*(x, sigma_i) - x) / sigma_i."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros(np.atleast_2d(x).shape)
    for s in schedule:
        acc += (np.atleast_2d(posterior_mean(mix, x, s)) - np.atleast_2d(x)) / s
    acc /= len(schedule)
    return acc[0] if x.ndim == 1 else acc


# synthetic datasets -----------------------------------------------------------

SWISS_T_MIN = 1.5 * math.pi
SWISS_T_MAX = 4.5 * math.pi
SWISS_SCALE = 4.0 / SWISS_T_MAX


@dataclass(frozen=True)
class SyntheticDataset:
    points: np.ndarray
    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidSizeError("dataset needs a non-empty (n, d) array")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def grid25_centers(spacing: float = 2.0) -> np.ndarray:
    """5x5 grid of mode centres, centred at the origin."""
    ticks = (np.arange(5) - 2) * float(spacing)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def grid25_mixture(spacing: float = 2.0, tau: float = 0.05) -> GaussianMixture:
    return GaussianMixture.uniform(grid25_centers(spacing), tau2=tau**2)


def _check_n(n):
    if int(n) != n or n < 1:
        raise InvalidSizeError(f"n must be a positive integer, got {n!r}")
    return int(n)


def gen_grid25(n: int, spacing: float = 2.0, tau: float = 0.05, seed=0) -> SyntheticDataset:
    n = _check_n(n)
    rng = np.random.default_rng(seed)
    centers = grid25_centers(spacing)
    idx = rng.integers(0, 25, size=n)
    pts = centers[idx] + tau * rng.standard_normal((n, 2))
    return SyntheticDataset(pts, "grid25", {"n": n, "spacing": spacing, "tau": tau, "seed": seed})


def swiss_roll_point(t):
    t = np.asarray(t, dtype=np.float64)
    return SWISS_SCALE * np.stack([t * np.cos(t), t * np.sin(t)], axis=-1)


def gen_swiss_roll(n: int, noise: float = 0.05, seed=0) -> SyntheticDataset:
    """2-D spiral r = c t for t in [1.5 pi, 4.5 pi], scaled into [-4, 4]^2."""
    n = _check_n(n)
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    t = rng.uniform(SWISS_T_MIN, SWISS_T_MAX, size=n)
    pts = swiss_roll_point(t) + noise * rng.standard_normal((n, 2))
    return SyntheticDataset(pts, "swiss-roll", {"n": n, "noise": noise, "seed": seed})


def gen_dirac(n: int, x0) -> SyntheticDataset:
    n = _check_n(n)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    return SyntheticDataset(np.tile(x0, (n, 1)), "dirac", {"n": n, "x0": x0.tolist()})


def make_dataset(tag: str, n: int, seed=0, **params) -> SyntheticDataset:
    if tag == "grid25":
        return gen_grid25(n, seed=seed, **params)
    if tag in ("swiss-roll", "swiss_roll"):
        return gen_swiss_roll(n, seed=seed, **params)
    if tag == "dirac":
        return gen_dirac(n, params.get("x0", [0.0, 0.0]))
    raise ValueError(f"unknown dataset {tag!r}")


def write_points_csv(points, path) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(pts.shape[1])])
        for row in pts:
            w.writerow([repr(float(v)) for v in row])


def read_points_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
