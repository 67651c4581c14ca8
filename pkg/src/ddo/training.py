"""Denoising objectives, Adam, and the mini-batch training loop.

Every objective has the form ``weight_t * ||P (a * F(v_t) + r)||^2`` with the grid L2
norm, where ``F`` is the network output, ``P`` is the identity or a power of the noise
covariance and ``r`` is built from the clean data and the noise.  Because ``P`` is a
symmetric Fourier multiplier the output gradient is ``2 weight a h^d P^2 (a F + r)``.
"""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import fno
from .corruption import DDPM, NCSN, NoiseSchedule, corrupt_array
from .grf import MaternCovariance, apply_power_array
from .grid import Dataset, GridFunction
from .spectral import multiply_array


class LossKind(str, enum.Enum):
    RESCALED_DSM = "rescaled_dsm"
    PLAIN_DSM = "plain_dsm"
    PRECOND_DSM = "precond_dsm"
    DDPM_W2 = "ddpm_w2"
    DDPM_KL = "ddpm_kl"


_NCSN_KINDS = {LossKind.RESCALED_DSM, LossKind.PLAIN_DSM, LossKind.PRECOND_DSM}


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    schedule: NoiseSchedule

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        want = NCSN if self.kind in _NCSN_KINDS else DDPM
        if self.schedule.kind != want:
            raise ValueError(f"{self.kind.value} needs a {want} schedule, got {self.schedule.kind}")
        if self.kind in (LossKind.PRECOND_DSM, LossKind.DDPM_KL) and not isinstance(self.schedule.noise, MaternCovariance):
            raise ValueError(f"{self.kind.value} needs a trace-class (Matérn) noise covariance")
        self.levels  # noqa: B018 -- validates the level range

    @property
    def levels(self) -> np.ndarray:
        """Admissible levels.  The KL objective has an infinite weight at t = 1 and skips it."""
        first = 2 if self.kind is LossKind.DDPM_KL else 1
        if first > self.schedule.T:
            raise ValueError("the KL objective needs at least two levels")
        return np.arange(first, self.schedule.T + 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "schedule": self.schedule.to_dict()}


def kl_weight(s: NoiseSchedule, t) -> np.ndarray:
    t = s.check_level(t)
    a, a_prev, b = s.alpha(t), s.alpha(t - 1), s.betas[t - 1]
    with np.errstate(divide="ignore"):
        return (1 - a) / ((1 - a_prev) * b)


def w2_weight(s: NoiseSchedule, t) -> np.ndarray:
    t = s.check_level(t)
    b = s.betas[t - 1]
    return b**2 / ((1 - b) * (1 - s.alpha(t)))


@dataclass
class LossBatch:
    """Network inputs plus everything needed to evaluate the objective on its output."""

    inputs: np.ndarray
    cond: np.ndarray
    weight: np.ndarray  # per example
    scale: np.ndarray  # per example factor ``a`` on the network output
    offset: np.ndarray  # ``r``
    precond: np.ndarray | None  # multiplier for ``P^2`` in the layout of multiply_array


def _bcast(x: np.ndarray, dims: int) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape((-1,) + (1,) * dims)


def prepare_batch(spec: LossSpec, u: np.ndarray, t, rng, base_noise: np.ndarray | None = None) -> LossBatch:
    s = spec.schedule
    dom, n, B = s.domain, u.shape[-1], u.shape[0]
    t = s.check_level(np.broadcast_to(np.asarray(t), (B,)))
    clean, noise, noisy, xi = corrupt_array(s, u, t, rng, base_noise)
    cond = np.asarray(s.conditioning(t), dtype=np.float64)
    ones = np.ones(B)
    kind = spec.kind
    if kind is LossKind.RESCALED_DSM:
        sig = s.sigma(t)
        return LossBatch(noisy, cond, ones, sig, xi, None)
    if kind is LossKind.PLAIN_DSM:
        return LossBatch(noisy, cond, ones, ones, noise, None)
    if kind is LossKind.PRECOND_DSM:
        return LossBatch(noisy, cond, ones, -ones, noise, s.noise.power_multiplier(n, -1.0))
    if kind is LossKind.DDPM_W2:
        return LossBatch(noisy, cond, w2_weight(s, t), ones, -xi, None)
    if np.any(t < 2):
        raise IndexError("the KL objective is undefined at t = 1")
    coef = np.sqrt(s.alpha(t - 1)) * s.betas[t - 1] / (1 - s.alpha(t))
    # residual C^{-1/2}(coef u - C^{1/2} G) = coef C^{-1/2} u - P0 G, with P0 the
    # projection onto the support of C (identity except the periodic mean mode)
    r = apply_power_array(s.noise, _bcast(coef, dom.dims) * u, -0.5)
    support = (s.noise.eigenvalues(n, "rfft") > 0).astype(np.float64)
    return LossBatch(noisy, cond, kl_weight(s, t), -ones, r, support)


def output_loss(spec: LossSpec, batch: LossBatch, out: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean objective over the batch and its gradient w.r.t. the network output."""
    dom = spec.schedule.domain
    d, n, B = dom.dims, out.shape[-1], out.shape[0]
    a = _bcast(batch.scale, d)
    res = a * out + batch.offset
    h = dom.cell_volume(n)
    axes = tuple(range(1, d + 1))
    if batch.precond is None:
        pres = res
        per = h * np.sum(res * res, axis=axes)
    else:
        pres = multiply_array(dom, res, batch.precond)
        if spec.kind is LossKind.PRECOND_DSM:
            # ||C^{-1/2} x||^2 = <x, C^{-1} x>
            per = h * np.sum(res * pres, axis=axes)
        else:
            per = h * np.sum(pres * pres, axis=axes)
    w = np.asarray(batch.weight, dtype=np.float64)
    value = float(np.mean(w * per))
    grad = (2.0 * h / B) * _bcast(w, d) * a * pres
    return value, grad


def batch_loss_and_grad(spec: LossSpec, m: fno.FnoModel, u: np.ndarray, t, rng, base_noise=None) -> fno.GradientTape:
    batch = prepare_batch(spec, u, t, rng, base_noise)
    mask = spec.schedule.domain.boundary_mask(u.shape[-1])
    return fno.loss_and_grad(m, batch.inputs, batch.cond, lambda out: output_loss(spec, batch, out), mask)


def batch_loss(spec: LossSpec, m: fno.FnoModel, u: np.ndarray, t, rng, base_noise=None) -> float:
    batch = prepare_batch(spec, u, t, rng, base_noise)
    mask = spec.schedule.domain.boundary_mask(u.shape[-1])
    out = fno.apply(m, batch.inputs, batch.cond, mask)
    return output_loss(spec, batch, out)[0]


def loss_value(spec: LossSpec, m: fno.FnoModel, u: GridFunction, t: int, rng) -> float:
    return batch_loss(spec, m, u.values[None], np.array([t]), rng)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays and advances ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1**state.step, 1 - b2**state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


# -- training loop -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    lr_halving_period: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    t_sampling: str = "uniform"  # or "all": every level for every example
    workers: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "lr_halving_period", "adam_eps", "workers"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.t_sampling not in ("uniform", "all"):
            raise ValueError(f"unknown t_sampling {self.t_sampling!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.lr_halving_period)


def _sharded_grad(spec, m, u, t, rng, workers, pool):
    s = spec.schedule
    # noise is drawn once for the whole batch so results do not depend on sharding
    xi = s.noise.sample_array(u.shape[-1], rng, u.shape[0])
    if pool is None:
        return batch_loss_and_grad(spec, m, u, t, rng, xi)
    bounds = np.linspace(0, len(u), workers + 1).astype(int)
    jobs = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    tapes = list(pool.map(lambda ab: batch_loss_and_grad(spec, m, u[ab[0]:ab[1]], t[ab[0]:ab[1]], None, xi[ab[0]:ab[1]]), jobs))
    loss, grads = 0.0, {k: np.zeros_like(v) for k, v in m.params.items()}
    for (a, b), tape in zip(jobs, tapes):
        frac = (b - a) / len(u)
        loss += frac * tape.loss
        for k in grads:
            grads[k] += frac * tape.grads[k]
    return fno.GradientTape(loss, grads)


def train(dataset: Dataset, spec: LossSpec, model: fno.FnoModel, cfg: TrainConfig,
          history_path: str | Path | None = None, callback: Callable | None = None):
    """Train in place of a copy of ``model``; returns ``(model, history)``.

    ``history`` rows are ``(epoch, mean_loss, lr)`` with 1-based epochs.  ``callback``
    is called as ``callback(epoch, model)`` after every epoch.
    """
    if dataset.count == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.domain != spec.schedule.domain:
        raise ValueError("dataset and noise covariance live on different domains")
    if dataset.resolution < model.cfg.min_resolution:
        raise ValueError(f"resolution {dataset.resolution} is below 2*modes = {model.cfg.min_resolution}")
    if model.cfg.output_scaling == "inv_sigma" and spec.schedule.kind != NCSN:
        raise ValueError("inv_sigma output scaling needs an NCSN schedule (conditioning on log sigma)")
    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    state = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    levels = spec.levels
    history = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(dataset.count)
            total, seen = 0.0, 0
            for start in range(0, dataset.count, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                u = dataset.samples[idx]
                if cfg.t_sampling == "uniform":
                    t = rng.choice(levels, size=len(idx))
                else:
                    u = np.repeat(u, len(levels), axis=0)
                    t = np.tile(levels, len(idx))
                try:
                    tape = _sharded_grad(spec, model, u, t, rng, cfg.workers, pool)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"epoch {epoch + 1}, batch at {start}: {exc}") from exc
                if not all(np.all(np.isfinite(g)) for g in tape.grads.values()):
                    raise TrainingDiverged(f"epoch {epoch + 1}, batch at {start}: non-finite gradient")
                model.params = adam_step(state, model.params, tape.grads, lr)
                total += tape.loss * len(idx)
                seen += len(idx)
            history.append((epoch + 1, total / seen, lr))
            if callback is not None:
                callback(epoch + 1, model)
    finally:
        if pool is not None:
            pool.shutdown()
    if history_path is not None:
        write_loss_history(history_path, history)
    return model, history


def write_loss_history(path: str | Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "lr"])
        for epoch, loss, lr in history:
            w.writerow([epoch, repr(float(loss)), repr(float(lr))])
