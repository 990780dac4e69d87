"""Geometric noise schedules and the sampler constants derived from them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from scorelab.errors import (
    InsufficientDataError,
    InvalidScheduleError,
    StepTooLargeError,
    StepTooSmallError,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing noise levels sigma_1 > ... > sigma_L with ratio gamma.

    ``sigmas`` is a read-only float64 array; the endpoints are stored exactly as
    given at construction.
    """

    sigmas: np.ndarray = field(repr=False)
    gamma: float

    def __post_init__(self):
        arr = np.array(self.sigmas, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "sigmas", arr)

    def __len__(self) -> int:
        return len(self.sigmas)

    def __getitem__(self, i):
        return self.sigmas[i]

    def __iter__(self):
        return iter(self.sigmas.tolist())

    @property
    def L(self) -> int:
        return len(self.sigmas)

    @property
    def sigma1(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigmaL(self) -> float:
        return float(self.sigmas[-1])

    def next_sigma(self, i: int) -> float:
        """sigma_{i+1} with the convention that the level after the last one is 0."""
        return float(self.sigmas[i + 1]) if i + 1 < self.L else 0.0

    def to_dict(self) -> dict:
        return {
            "sigma1": self.sigma1,
            "sigmaL": self.sigmaL,
            "L": self.L,
            "gamma": self.gamma,
            "sigmas": self.sigmas.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return geometric_schedule(d["sigma1"], d["sigmaL"], d["L"])


@dataclass(frozen=True)
class SamplerConstants:
    epsilon: float
    eta: float
    beta: float


def geometric_schedule(sigma1: float, sigmaL: float, L: int) -> NoiseSchedule:
    """L levels from sigma1 down to sigmaL with constant ratio.

    For ``L == 1`` both endpoints must coincide and gamma is defined as 1.
    """
    if isinstance(L, bool) or int(L) != L or L < 1:
        raise InvalidScheduleError(f"L must be a positive integer, got {L!r}")
    L = int(L)
    sigma1 = float(sigma1)
    sigmaL = float(sigmaL)
    if not (math.isfinite(sigma1) and math.isfinite(sigmaL)):
        raise InvalidScheduleError("noise levels must be finite")
    if sigma1 <= 0 or sigmaL <= 0:
        raise InvalidScheduleError(f"noise levels must be positive, got {sigma1}, {sigmaL}")
    if sigma1 < sigmaL:
        raise InvalidScheduleError(f"sigma1={sigma1} is smaller than sigmaL={sigmaL}")
    if L == 1:
        if sigma1 != sigmaL:
            raise InvalidScheduleError("a single-level schedule needs sigma1 == sigmaL")
        return NoiseSchedule(np.array([sigma1]), 1.0)
    if sigma1 == sigmaL:
        raise InvalidScheduleError("sigma1 == sigmaL requires L == 1")
    gamma = (sigmaL / sigma1) ** (1.0 / (L - 1))
    # exp/log keeps the relative error of sigma1 * gamma**i at a few ulps
    log_gamma = (math.log(sigmaL) - math.log(sigma1)) / (L - 1)
    sigmas = sigma1 * np.exp(log_gamma * np.arange(L))
    sigmas[0] = sigma1
    sigmas[-1] = sigmaL
    return NoiseSchedule(sigmas, gamma)


def dilate(schedule: NoiseSchedule, n_sigma: int) -> NoiseSchedule:
    """Insert geometric intermediate levels so each original step becomes n_sigma steps.

    The result has (L - 1) * n_sigma + 1 levels, the same endpoints and ratio
    gamma ** (1 / n_sigma).
    """
    if isinstance(n_sigma, bool) or int(n_sigma) != n_sigma or n_sigma < 1:
        raise InvalidScheduleError(f"n_sigma must be a positive integer, got {n_sigma!r}")
    n_sigma = int(n_sigma)
    if n_sigma == 1 or schedule.L == 1:
        return schedule
    return geometric_schedule(schedule.sigma1, schedule.sigmaL, (schedule.L - 1) * n_sigma + 1)


def sigma1_from_data(points) -> float:
    """Largest pairwise Euclidean distance in a point set."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise InsufficientDataError("need at least two points")
    best = 0.0
    # row blocks keep memory at O(block * n)
    block = 1024
    for start in range(0, pts.shape[0], block):
        chunk = pts[start : start + block]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def cas_constants(schedule: NoiseSchedule, epsilon: float) -> SamplerConstants:
    """eta = epsilon / sigma_L**2 and the consistent-sampling noise factor beta."""
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise StepTooLargeError(f"epsilon must be positive, got {epsilon}")
    eta = epsilon / schedule.sigmaL**2
    if eta > 1.0:
        raise StepTooLargeError(f"eta = {eta:.6g} > 1; reduce epsilon below {schedule.sigmaL**2:.6g}")
    g2 = schedule.gamma**2
    if (1.0 - eta) ** 2 > g2:
        raise StepTooSmallError(
            f"(1 - eta)^2 = {(1 - eta) ** 2:.6g} exceeds gamma^2 = {g2:.6g}; "
            f"eta must be at least {1 - schedule.gamma:.6g}"
        )
    beta = math.sqrt(1.0 - (1.0 - eta) ** 2 / g2)
    return SamplerConstants(epsilon=epsilon, eta=eta, beta=beta)
