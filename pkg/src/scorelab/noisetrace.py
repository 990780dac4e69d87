"""Noise-variance recurrences of ALS and CAS under the optimal score.

With the exact score every update is (1 - eta) x + eta H + noise, so the noise
component's variance evolves independently of the clean component:

    ALS, level t:   v^2 <- (1 - eta)^2 v^2 + 2 eta sigma_t^2   (n_sigma times)
    CAS, level t:   v^2 <- (1 - eta)^2 v^2 + beta^2 sigma_{t+1}^2
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from scorelab.schedules import NoiseSchedule, cas_constants, dilate


@dataclass(frozen=True)
class VarianceTrace:
    """One record per update: global step, level index, prescribed sigma, noise std."""

    step: np.ndarray
    level: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.v - self.sigma

    def __len__(self):
        return len(self.step)

    def level_ends(self) -> np.ndarray:
        """Noise std after the last update of every level."""
        last = np.r_[np.nonzero(np.diff(self.level))[0], len(self.level) - 1]
        return self.v[last]


def als_stationary_std(sigma_t: float, eta: float) -> float:
    """Limit of the ALS noise std after infinitely many steps at one level."""
    return sigma_t * math.sqrt(2.0 / (2.0 - eta))


def als_level_closed_form(v0: float, sigma_t: float, eta: float, n) -> np.ndarray:
    """Noise std after n ALS steps at a single level, starting from v0."""
    n = np.asarray(n, dtype=np.float64)
    q = (1.0 - eta) ** (2.0 * n)
    return np.sqrt(v0**2 * q + 2.0 * sigma_t**2 / (2.0 - eta) * (1.0 - q))


def als_trace(schedule: NoiseSchedule, eta: float, n_sigma: int, v0: float) -> VarianceTrace:
    """Noise std after every ALS update (v carried across levels).

    Records are post-update; ``sigma`` is the level used by that update.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    n_sigma = int(n_sigma)
    L = schedule.L
    total = L * n_sigma
    v = np.empty(total)
    level = np.repeat(np.arange(L), n_sigma)
    sig = np.repeat(schedule.sigmas, n_sigma)
    q2 = (1.0 - eta) ** 2
    var = v0 * v0
    for k in range(total):
        var = var * q2 + 2.0 * eta * sig[k] ** 2
        v[k] = math.sqrt(var)
    return VarianceTrace(np.arange(total), level, sig, v)


def cas_trace(schedule: NoiseSchedule, eta: float, v0: float | None = None) -> VarianceTrace:
    """Noise std v_t for t = 1..L from v_{t+1}^2 = (1 - eta)^2 v_t^2 + beta^2 sigma_{t+1}^2,
    seeded at v_0 = sigma_1 / gamma (the level one ratio above sigma_1).

    Record t (0-based) is the std a sample carries when it enters level t, so
    the first recurrence step is the update taken at sigma_0 = sigma_1 / gamma.
    Running the sampler itself from noise sigma_1 skips that step and gives the
    same values; see ``cas_entering_stds``. The std left after the final
    update, (1 - eta) sigma_L, is ``cas_final_std``.
    """
    consts = cas_constants(schedule, eta * schedule.sigmaL**2)
    beta2 = consts.beta**2
    q2 = (1.0 - consts.eta) ** 2
    if v0 is None:
        v0 = schedule.sigma1 / schedule.gamma
    L = schedule.L
    v = np.empty(L)
    # the update at "level 0" (sigma_0 = sigma_1 / gamma) has sigma_{next} = sigma_1
    var = v0 * v0 * q2 + beta2 * schedule.sigmas[0] ** 2
    for t in range(L):
        v[t] = math.sqrt(var)
        var = var * q2 + beta2 * schedule.next_sigma(t) ** 2
    return VarianceTrace(np.arange(L), np.arange(L), schedule.sigmas.copy(), v)


def cas_entering_stds(schedule: NoiseSchedule, eta: float, v0: float | None = None) -> np.ndarray:
    """Noise std before each CAS update, starting from v0 itself (no warm-up step).

    This is the quantity a CAS run measures when initialised at noise v0:
    entry 0 is v0, entry t > 0 is the std after update t - 1.
    """
    consts = cas_constants(schedule, eta * schedule.sigmaL**2)
    q2 = (1.0 - consts.eta) ** 2
    beta2 = consts.beta**2
    if v0 is None:
        v0 = schedule.sigma1 / schedule.gamma
    out = np.empty(schedule.L + 1)
    var = v0 * v0
    out[0] = v0
    for t in range(schedule.L):
        var = var * q2 + beta2 * schedule.next_sigma(t) ** 2
        out[t + 1] = math.sqrt(var)
    return out


def cas_final_std(schedule: NoiseSchedule, eta: float) -> float:
    return (1.0 - eta) * schedule.sigmaL


def als_monotonicity_condition(sigma_t: float, v0: float) -> float:
    """Largest eta for which the ALS noise std decreases at a level: 2 - 2 sigma_t^2 / v0^2."""
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    return 2.0 - 2.0 * sigma_t**2 / v0**2


def figure_rows(schedule: NoiseSchedule, eta: float, n_sigma: int, v0: float | None = None):
    """Rows (step, level, sigma_t, v_als, v_cas, diff) pairing the ALS trace with
    the CAS noise std at the same level boundary of the dilated schedule."""
    if v0 is None:
        v0 = schedule.sigma1 / schedule.gamma
    als = als_trace(schedule, eta, n_sigma, v0)
    dil = dilate(schedule, n_sigma)
    # CAS on the dilated schedule starts from its own sigma_1 / gamma'
    cas = cas_trace(dil, eta)
    boundary = cas.v[np.arange(schedule.L) * n_sigma]
    v_cas = boundary[als.level]
    return [
        (int(s), int(l), float(sg), float(va), float(vc), float(va - vc))
        for s, l, sg, va, vc in zip(als.step, als.level, als.sigma, als.v, v_cas)
    ]


TRACE_HEADER = ("step", "level", "sigma_t", "v_als", "v_cas", "diff")


def write_trace_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([r[0], r[1], *(repr(v) for v in r[2:])])
