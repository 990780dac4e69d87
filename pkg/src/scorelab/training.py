"""Denoising score matching, least-squares adversarial losses and training loops.

Both score-network modes output f and use s(x, sigma) = f / sigma, so the
DSM residual sigma * s + (x_noisy - x) / sigma simplifies to f + z and the
EDS is H = x_noisy + sigma * f.

Randomness: one numpy PCG64 stream per run, consumed per outer iteration in
the order (batch indices, sigma indices, z).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from scorelab.errors import ConfigError, NonFiniteError
from scorelab.nn import AdamState, EmaState, Mlp, adam_step, ema_update, save_checkpoint
from scorelab.sampler import NetScore, ScoreModel
from scorelab.schedules import NoiseSchedule, geometric_schedule

log = logging.getLogger(__name__)


@dataclass
class Batch:
    x: np.ndarray  # clean points (n, d)
    sigma: np.ndarray  # per-row noise level (n,)
    z: np.ndarray  # standard normals (n, d)

    @property
    def x_noisy(self) -> np.ndarray:
        return self.x + self.sigma[:, None] * self.z

    def __len__(self):
        return self.x.shape[0]


def draw_batch(rng: np.random.Generator, data: np.ndarray, schedule: NoiseSchedule, size: int) -> Batch:
    idx = rng.integers(0, data.shape[0], size=size)
    lvl = rng.integers(0, schedule.L, size=size)
    z = rng.standard_normal((size, data.shape[1]))
    return Batch(data[idx], schedule.sigmas[lvl], z)


def _check_sigmas(batch: Batch, schedule: NoiseSchedule | None):
    if schedule is not None and not np.all(np.isin(batch.sigma, schedule.sigmas)):
        raise ConfigError("batch contains noise levels outside the schedule")


# losses --------------------------------------------------------------------------


def dsm_loss_value(model: ScoreModel, batch: Batch, schedule: NoiseSchedule | None = None):
    """Per-sample 1/2 || sigma s(x_noisy, sigma) + z ||^2 for any score model."""
    _check_sigmas(batch, schedule)
    r = model(batch.x_noisy, batch.sigma) * batch.sigma[:, None] + batch.z
    return 0.5 * (r * r).sum(axis=1)


def dsm_loss(score: NetScore, batch: Batch, schedule: NoiseSchedule | None = None):
    """Mean DSM loss and its gradient with respect to the score network."""
    _check_sigmas(batch, schedule)
    net = score.net
    f, cache = net.forward(score.net_input(batch.x_noisy, batch.sigma), return_cache=True)
    r = f + batch.z
    n = len(batch)
    loss = 0.5 * float((r * r).sum()) / n
    grads, _ = net.backward(cache, r / n)
    return loss, grads


def lsgan_d_loss(disc: Mlp, real, fake):
    """E[(D(real) - 1)^2] + E[(D(fake) + 1)^2] and its gradient for the discriminator.

    ``fake`` is a plain array, so nothing flows back to the network that made it.
    """
    d_real, c_real = disc.forward(np.atleast_2d(real), return_cache=True)
    d_fake, c_fake = disc.forward(np.atleast_2d(fake), return_cache=True)
    e_real = d_real - 1.0
    e_fake = d_fake + 1.0
    n_r, n_f = e_real.shape[0], e_fake.shape[0]
    loss = float((e_real**2).sum()) / n_r + float((e_fake**2).sum()) / n_f
    g_real, _ = disc.backward(c_real, 2.0 * e_real / n_r)
    g_fake, _ = disc.backward(c_fake, 2.0 * e_fake / n_f)
    return loss, [a + b for a, b in zip(g_real, g_fake)]


@dataclass
class HybridTerms:
    total: float
    adversarial: float
    dsm: float


def hybrid_g_loss(score: NetScore, disc: Mlp, batch: Batch, lam: float, adv_weight: float = 1.0):
    """E[(D(H) - 1)^2] + lam * E[1/2 ||f + z||^2] with H = x_noisy + sigma f.

    Returns (HybridTerms, gradients for the score network). The discriminator
    is only read. ``adv_weight = 0`` drops the adversarial term (debug switch
    for the lam -> infinity limit).
    """
    if lam < 0:
        raise ConfigError("lam must be non-negative")
    net = score.net
    xt = batch.x_noisy
    f, cache = net.forward(score.net_input(xt, batch.sigma), return_cache=True)
    n = len(batch)
    h = xt + batch.sigma[:, None] * f
    d_h, d_cache = disc.forward(h, return_cache=True)
    e = d_h - 1.0
    adv = float((e * e).sum()) / n
    r = f + batch.z
    dsm = 0.5 * float((r * r).sum()) / n
    _, dh = disc.backward(d_cache, 2.0 * adv_weight * e / n)
    grad_f = batch.sigma[:, None] * dh + lam * r / n
    grads, _ = net.backward(cache, grad_f)
    return HybridTerms(adv_weight * adv + lam * dsm, adv, dsm), grads


# configuration and state ----------------------------------------------------------


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 128
    sigma1: float | None = None  # None: largest pairwise distance of the data
    sigmaL: float = 0.01
    L: int = 50
    lam: float = 1.0
    n_d: int = 1
    adv_weight: float = 1.0
    score_optim: OptimConfig | None = None  # None: mode default, see resolved_score_optim
    disc_optim: OptimConfig = field(default_factory=lambda: OptimConfig(lr=1e-3, beta1=-0.5, beta2=0.9))
    ema: float | None = 0.999
    seed: int = 0
    hidden: tuple = (128, 128, 128)
    disc_hidden: tuple = (128, 128, 128)
    activation: str = "softplus"
    conditional: bool = False
    checkpoint_every: int = 2500
    log_every: int = 100
    out_dir: str | None = None
    score_lr: float | None = None  # overrides the learning rate of the mode default

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.n_d < 1:
            raise ConfigError("n_d must be at least 1")
        if self.ema is not None and not 0.0 <= self.ema < 1.0:
            raise ConfigError("ema must lie in [0, 1)")
        if self.score_lr is not None and self.score_lr <= 0:
            raise ConfigError("score_lr must be positive")
        if isinstance(self.score_optim, dict):
            self.score_optim = OptimConfig(**self.score_optim)
        if isinstance(self.disc_optim, dict):
            self.disc_optim = OptimConfig(**self.disc_optim)
        self.hidden = tuple(self.hidden)
        self.disc_hidden = tuple(self.disc_hidden)

    def resolved_score_optim(self, adversarial: bool) -> OptimConfig:
        """Explicit ``score_optim`` wins; otherwise plain DSM uses standard Adam
        moments and the adversarial mode uses zero momentum, (0, 0.9)."""
        if self.score_optim is not None:
            return self.score_optim
        base = OptimConfig(beta1=0.0, beta2=0.9) if adversarial else OptimConfig()
        if self.score_lr is not None:
            base = replace(base, lr=self.score_lr)
        return base

    def schedule_for(self, data) -> NoiseSchedule:
        from scorelab.schedules import sigma1_from_data

        sigma1 = self.sigma1 if self.sigma1 is not None else sigma1_from_data(_diameter_candidates(data))
        return geometric_schedule(sigma1, self.sigmaL, self.L)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["disc_hidden"] = list(self.disc_hidden)
        return d


def _diameter_candidates(data):
    # the diameter of a planar point set is attained on its convex hull
    data = np.asarray(data)
    if data.shape[1] != 2 or data.shape[0] < 4:
        return data
    from scipy.spatial import ConvexHull

    return data[ConvexHull(data).vertices]


@dataclass
class TrainState:
    score: NetScore
    score_opt: AdamState
    schedule: NoiseSchedule
    ema: EmaState | None = None
    disc: Mlp | None = None
    disc_opt: AdamState | None = None
    step: int = 0
    d_steps: int = 0

    def sampling_model(self) -> NetScore:
        """Score model used for sampling: the EMA shadow when enabled, raw parameters otherwise."""
        if self.ema is None:
            return self.score
        return NetScore(self.score.net, self.score.conditional, params=self.ema.shadow)


@dataclass
class TrainReport:
    iteration: list = field(default_factory=list)
    dsm_loss: list = field(default_factory=list)
    d_loss: list = field(default_factory=list)
    g_adv_loss: list = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: str | None = None
    checkpoints: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.iteration, self.dsm_loss, self.d_loss, self.g_adv_loss))

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "dsm_loss", "d_loss", "g_adv_loss"])
            for it, a, b, c in self.rows():
                w.writerow([it, repr(a), "" if b is None else repr(b), "" if c is None else repr(c)])


def init_state(cfg: TrainConfig, data, adversarial: bool = False) -> TrainState:
    data = np.asarray(data, dtype=np.float64)
    d = data.shape[1]
    schedule = cfg.schedule_for(data)
    widths = [d + (1 if cfg.conditional else 0), *cfg.hidden, d]
    net = Mlp(widths, cfg.activation, seed=cfg.seed)
    score = NetScore(net, cfg.conditional)
    opt = AdamState.for_params(net.params, **asdict(cfg.resolved_score_optim(adversarial)))
    ema = EmaState.from_params(net.params, cfg.ema) if cfg.ema is not None else None
    state = TrainState(score, opt, schedule, ema)
    if adversarial:
        disc = Mlp([d, *cfg.disc_hidden, 1], cfg.activation, seed=cfg.seed + 1)
        state.disc = disc
        state.disc_opt = AdamState.for_params(disc.params, **asdict(cfg.disc_optim))
    return state


def _save(state: TrainState, cfg: TrainConfig, path: Path, kind: str):
    meta = {
        "kind": kind,
        "step": state.step,
        "conditional": state.score.conditional,
        "schedule": {k: v for k, v in state.schedule.to_dict().items() if k != "sigmas"},
    }
    save_checkpoint(path, state.score.net, meta, state.ema)
    if state.disc is not None:
        save_checkpoint(path.with_name(path.stem + "_disc" + path.suffix), state.disc, {"kind": "disc", "step": state.step})


def _guard_loss(value, state, cfg, report, what):
    if math.isfinite(value):
        return
    msg = f"non-finite {what} at iteration {state.step}"
    if report.checkpoints:
        msg += f"; last good checkpoint {report.checkpoints[-1]}"
    raise NonFiniteError(msg)


def _score_update(state: TrainState, grads):
    params, state.score_opt = adam_step(state.score.net.params, grads, state.score_opt)
    state.score.net.params = params
    if state.ema is not None:
        state.ema = ema_update(state.ema, params)


def _train(cfg: TrainConfig, data, adversarial: bool, state: TrainState | None = None):
    data = np.asarray(data, dtype=np.float64)
    state = state or init_state(cfg, data, adversarial)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    acc = {"dsm": [], "d": [], "g": []}
    t0 = time.perf_counter()
    for _ in range(cfg.iterations):
        batch = draw_batch(rng, data, state.schedule, cfg.batch_size)
        if adversarial:
            d_loss = None
            for _ in range(cfg.n_d):
                fake = batch.x_noisy + batch.sigma[:, None] * state.score.net.forward(
                    state.score.net_input(batch.x_noisy, batch.sigma)
                )
                d_loss, d_grads = lsgan_d_loss(state.disc, batch.x, fake)
                _guard_loss(d_loss, state, cfg, report, "discriminator loss")
                params, state.disc_opt = adam_step(state.disc.params, d_grads, state.disc_opt)
                state.disc.params = params
                state.d_steps += 1
            terms, grads = hybrid_g_loss(state.score, state.disc, batch, cfg.lam, cfg.adv_weight)
            _guard_loss(terms.total, state, cfg, report, "score loss")
            acc["dsm"].append(terms.dsm)
            acc["d"].append(d_loss)
            acc["g"].append(terms.adversarial)
        else:
            loss, grads = dsm_loss(state.score, batch)
            _guard_loss(loss, state, cfg, report, "DSM loss")
            acc["dsm"].append(loss)
        _score_update(state, grads)
        state.step += 1
        if cfg.log_every and state.step % cfg.log_every == 0:
            report.iteration.append(state.step)
            report.dsm_loss.append(float(np.mean(acc["dsm"])))
            report.d_loss.append(float(np.mean(acc["d"])) if acc["d"] else None)
            report.g_adv_loss.append(float(np.mean(acc["g"])) if acc["g"] else None)
            acc = {"dsm": [], "d": [], "g": []}
            log.debug("iter %d dsm %.4f", state.step, report.dsm_loss[-1])
        if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            path = out / f"ckpt_{state.step:07d}.bin"
            _save(state, cfg, path, "score")
            report.checkpoints.append(str(path))
    report.wall_clock = time.perf_counter() - t0
    if out is not None:
        path = out / "final.bin"
        _save(state, cfg, path, "score")
        report.checkpoint = str(path)
    return state, report


def train_dsm(cfg: TrainConfig, data, state: TrainState | None = None):
    """Plain denoising score matching. Returns (TrainState, TrainReport)."""
    return _train(cfg, data, adversarial=False, state=state)


def train_hybrid(cfg: TrainConfig, data, state: TrainState | None = None):
    """Alternating LSGAN training: n_d discriminator updates on EDS fakes, then
    one score update on the adversarial + lam * DSM objective."""
    return _train(cfg, data, adversarial=True, state=state)
