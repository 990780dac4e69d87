"""Mode coverage, mode-histogram KL, distance to the data manifold and the
two-sample energy distance for low-dimensional experiments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

_BLOCK = 2048


def _as_points(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (n, d) array")
    return a


def _nearest(samples, centers):
    """Index of and distance to the nearest centre for every sample."""
    idx = np.empty(samples.shape[0], dtype=np.int64)
    dist = np.empty(samples.shape[0])
    for s in range(0, samples.shape[0], _BLOCK):
        chunk = samples[s : s + _BLOCK]
        d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        j = d2.argmin(axis=1)
        idx[s : s + _BLOCK] = j
        dist[s : s + _BLOCK] = np.sqrt(d2[np.arange(len(j)), j])
    return idx, dist


@dataclass
class ModeReport:
    covered: int
    total: int
    kl: float
    counts: list
    unassigned: int
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)

    CSV_HEADER = ("covered", "total", "kl", "unassigned", "threshold", "n_samples")

    def csv_row(self):
        return (self.covered, self.total, self.kl, self.unassigned, self.threshold, sum(self.counts) + self.unassigned)


def kl_from_uniform(counts) -> float:
    """KL(empirical || uniform) in nats; empty modes contribute nothing."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return math.inf
    p = counts[counts > 0] / n
    return float(np.sum(p * np.log(p * counts.size)))


def mode_coverage(samples, centers, threshold: float) -> ModeReport:
    """Assign every sample to its nearest centre if closer than ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    samples = _as_points(samples, "samples")
    centers = _as_points(centers, "centers")
    idx, dist = _nearest(samples, centers)
    ok = dist <= threshold
    counts = np.bincount(idx[ok], minlength=centers.shape[0])
    return ModeReport(
        covered=int((counts > 0).sum()),
        total=int(centers.shape[0]),
        kl=kl_from_uniform(counts),
        counts=counts.tolist(),
        unassigned=int((~ok).sum()),
        threshold=float(threshold),
    )


def mean_nearest_mode_distance(samples, centers) -> float:
    samples = _as_points(samples, "samples")
    centers = _as_points(centers, "centers")
    return float(_nearest(samples, centers)[1].mean())


def _mean_abs_diff_1d(a, b):
    """E|a - b| over all pairs for 1-D samples, in O((n + m) log m)."""
    b = np.sort(b)
    cb = np.concatenate([[0.0], np.cumsum(b)])
    k = np.searchsorted(b, a, side="right")
    total = cb[-1]
    m = b.size
    s = a * k - cb[k] + (total - cb[k]) - a * (m - k)
    return float(s.sum()) / (a.size * m)


def _mean_dist(a, b):
    if a.shape[1] == 1:
        return _mean_abs_diff_1d(a[:, 0], b[:, 0])
    total = 0.0
    for s in range(0, a.shape[0], _BLOCK):
        chunk = a[s : s + _BLOCK]
        total += np.sqrt(((chunk[:, None, :] - b[None, :, :]) ** 2).sum(-1)).sum()
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a, b, unbiased: bool = False) -> float:
    """2 E|A - B| - E|A - A'| - E|B - B'|.

    The default V-statistic averages over all pairs, is zero for identical
    samples and never negative. ``unbiased=True`` drops the i = j pairs from
    the within-sample terms (U-statistic), which can dip below zero.
    """
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples differ in dimension")
    cross = _mean_dist(a, b)
    aa = _mean_dist(a, a)
    bb = _mean_dist(b, b)
    if unbiased:
        na, nb = a.shape[0], b.shape[0]
        if na < 2 or nb < 2:
            raise ValueError("the unbiased estimate needs two points per sample")
        aa *= na / (na - 1)
        bb *= nb / (nb - 1)
        return 2.0 * cross - aa - bb
    return max(2.0 * cross - aa - bb, 0.0)
