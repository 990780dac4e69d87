"""Counter-based Gaussian streams for independent Monte Carlo chains.

Every draw is a pure function of (seed, stream, chain, step, coordinate), so a
chain's noise does not depend on how many other chains run next to it or in
which order they are evaluated. Bits come from the splitmix64 finalizer applied
to a running hash of the counter fields; normals come from Box-Muller.
"""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# stream tags
INIT = 0
STEP = 1
DATA = 2


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> _S30)
    x = x * _M1
    x = x ^ (x >> _S27)
    x = x * _M2
    return x ^ (x >> _S31)


def _absorb(h: np.ndarray, value) -> np.ndarray:
    return _mix(h ^ (np.asarray(value, dtype=np.uint64) + _GOLDEN))


def _to_u64(v) -> np.ndarray:
    # negative ints (e.g. seeds) wrap into uint64 deterministically
    a = np.asarray(v, dtype=np.int64)
    return a.astype(np.uint64)


def uniform_bits(seed: int, stream: int, chains, step: int, n_words: int) -> np.ndarray:
    """uint64 words, shape (len(chains), n_words)."""
    with np.errstate(over="ignore"):
        h = _absorb(_to_u64(np.array([seed])), _to_u64(stream))
        h = _absorb(h, _to_u64(step))
        h = _absorb(h, _to_u64(np.asarray(chains))[:, None])
        return _absorb(h, np.arange(n_words, dtype=np.uint64)[None, :])


def uniforms(seed: int, stream: int, chains, step: int, n: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), shape (len(chains), n)."""
    bits = uniform_bits(seed, stream, chains, step, n)
    return ((bits >> _S11).astype(np.float64) + 0.5) * (1.0 / 2.0**53)


def normals(seed: int, stream: int, chains, step: int, dim: int) -> np.ndarray:
    """Standard normals, shape (len(chains), dim)."""
    half = (dim + 1) // 2
    u = uniforms(seed, stream, chains, step, 2 * half)
    r = np.sqrt(-2.0 * np.log(u[:, :half]))
    theta = 2.0 * np.pi * u[:, half:]
    z = np.empty((u.shape[0], 2 * half))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z[:, :dim]


class ChainRNG:
    """Gaussian noise for a fixed set of chains under one run seed."""

    def __init__(self, seed: int, chains=None, n_chains: int | None = None):
        if chains is None:
            if n_chains is None:
                raise ValueError("give either chains or n_chains")
            chains = np.arange(n_chains)
        self.seed = int(seed)
        self.chains = np.asarray(chains, dtype=np.int64)

    def __len__(self):
        return len(self.chains)

    def init_noise(self, dim: int) -> np.ndarray:
        return normals(self.seed, INIT, self.chains, 0, dim)

    def step_noise(self, step: int, dim: int) -> np.ndarray:
        return normals(self.seed, STEP, self.chains, step, dim)

    def subset(self, idx) -> "ChainRNG":
        return ChainRNG(self.seed, self.chains[idx])
