"""Small dense networks in numpy with hand-written reverse mode, Adam and EMA.

Layers compute ``h @ W + b`` on row-batches. Hidden layers use softplus, the
output layer is linear.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from scorelab.errors import NonFiniteError


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus_with_grad(x):
    e = np.exp(-np.abs(x))
    inv = 1.0 / (1.0 + e)
    return np.maximum(x, 0.0) + np.log1p(e), np.where(x >= 0, inv, e * inv)


def _tanh_with_grad(x):
    t = np.tanh(x)
    return t, 1.0 - t * t


# name -> function returning (activation, derivative)
_ACTIVATIONS = {
    "softplus": _softplus_with_grad,
    "tanh": _tanh_with_grad,
    "identity": lambda x: (x, np.ones_like(x)),
}


class StaleCacheError(RuntimeError):
    pass


@dataclass
class ForwardCache:
    version: int
    net_id: int
    inputs: list  # input to each layer
    slopes: list  # activation derivative at each hidden layer


class Mlp:
    """Dense feed-forward net. ``params`` is the flat list [W0, b0, W1, b1, ...]."""

    def __init__(self, widths, activation="softplus", params=None, seed=0):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad layer widths {widths}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self._version = 0
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = params

    def _init_params(self, rng):
        params = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            params.append(rng.uniform(-bound, bound, size=fan_out))
        return params

    @property
    def params(self) -> list:
        return self._params

    @params.setter
    def params(self, value):
        value = [np.asarray(p, dtype=np.float64) for p in value]
        shapes = self.param_shapes()
        if [p.shape for p in value] != shapes:
            raise ValueError(f"parameter shapes {[p.shape for p in value]} != {shapes}")
        self._params = value
        self._version += 1

    def param_shapes(self):
        shapes = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        out, k = [], 0
        for shape in self.param_shapes():
            size = int(np.prod(shape))
            out.append(flat[k : k + size].reshape(shape).copy())
            k += size
        self.params = out

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.activation, [p.copy() for p in self._params])

    def forward(self, x, params=None, return_cache=False):
        """Batch forward pass; ``x`` is (n, in_dim) or a single vector."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.in_dim:
            raise ValueError(f"input dimension {h.shape[1]} != {self.in_dim}")
        params = self._params if params is None else params
        act = _ACTIVATIONS[self.activation]
        inputs, slopes = [], []
        for layer in range(self.n_layers):
            W, b = params[2 * layer], params[2 * layer + 1]
            inputs.append(h)
            a = h @ W + b
            if layer < self.n_layers - 1:
                h, slope = act(a)
                slopes.append(slope)
            else:
                h = a
        out = h[0] if single else h
        if return_cache:
            return out, ForwardCache(self._version, id(self), inputs, slopes)
        return out

    __call__ = forward

    def backward(self, cache: ForwardCache, grad_out):
        """Reverse pass for a scalar loss with d loss / d output = ``grad_out``.

        Returns (parameter gradients in ``params`` order, gradient w.r.t. input).
        """
        if cache.net_id != id(self) or cache.version != self._version:
            raise StaleCacheError("forward cache does not match the current parameters")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grads = [None] * (2 * self.n_layers)
        for layer in reversed(range(self.n_layers)):
            W = self._params[2 * layer]
            grads[2 * layer] = cache.inputs[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ W.T
            if layer > 0:
                g = g * cache.slopes[layer - 1]
        return grads, g


def numerical_gradient(loss_fn, params, h: float = 1e-5):
    """Central differences of ``loss_fn(params) -> float`` for every entry of every array."""
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    out = []
    for p in params:
        g = np.empty_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = loss_fn(params)
            flat[k] = old - h
            down = loss_fn(params)
            flat[k] = old
            gflat[k] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def gradient_error(analytic, numeric) -> float:
    """Largest per-array relative error ||a - n|| / max(||a||, ||n||)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


# optimiser -------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not -1.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must lie in (-1, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in (0, 1), got {self.beta2}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def check_finite(grads, what="gradient"):
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NonFiniteError(f"{what} {i} (shape {np.shape(g)}) has {bad} non-finite entries")


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Returns (new params, new state).

    beta1 may be zero or negative; the bias correction 1 - beta1**t never
    vanishes for |beta1| < 1.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    check_finite(grads)
    if not state.m:
        state = replace(state, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=new_m, v=new_v, step=t)


# EMA ---------------------------------------------------------------------------


@dataclass
class EmaState:
    decay: float
    shadow: list

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1), got {self.decay}")

    @classmethod
    def from_params(cls, params, decay: float, zero: bool = False) -> "EmaState":
        return cls(decay, [np.zeros_like(p) if zero else np.array(p, copy=True) for p in params])


def ema_update(ema: EmaState, params) -> EmaState:
    m = ema.decay
    if len(params) != len(ema.shadow):
        raise ValueError("parameter list length differs from the shadow")
    shadow = []
    for s, p in zip(ema.shadow, params):
        if s.shape != p.shape:
            raise ValueError(f"shape mismatch {s.shape} vs {p.shape}")
        shadow.append(m * s + (1.0 - m) * p)
    return EmaState(m, shadow)


# checkpoints -----------------------------------------------------------------

_MAGIC = b"SCLB"


def save_checkpoint(path, net: Mlp, meta: dict | None = None, ema: EmaState | None = None) -> None:
    """Header JSON followed by little-endian float64 parameters (and EMA shadow).

    Layout: 4-byte magic, uint32 LE header length, UTF-8 JSON header, then the
    flat parameter blob, then the flat EMA shadow if ``header["has_ema"]``.
    """
    header = {
        "widths": net.widths,
        "activation": net.activation,
        "n_params": net.n_params,
        "has_ema": ema is not None,
        "ema_decay": ema.decay if ema is not None else None,
    }
    header.update(meta or {})
    hbytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(hbytes)))
    buf.write(hbytes)
    buf.write(net.get_flat().astype("<f8").tobytes())
    if ema is not None:
        buf.write(np.concatenate([s.ravel() for s in ema.shadow]).astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Returns (net, header, ema or None)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode())
    n = header["n_params"]
    blob = np.frombuffer(raw[8 + hlen :], dtype="<f8").astype(np.float64)
    net = Mlp(header["widths"], header["activation"], params=[np.zeros(s) for s in _shapes(header["widths"])])
    net.set_flat(blob[:n])
    ema = None
    if header.get("has_ema"):
        shadow_net = net.copy()
        shadow_net.set_flat(blob[n : 2 * n])
        ema = EmaState(header["ema_decay"], shadow_net.params)
    return net, header, ema


def _shapes(widths):
    shapes = []
    for a, b in zip(widths[:-1], widths[1:]):
        shapes += [(a, b), (b,)]
    return shapes
