"""Sampling: annealed Langevin dynamics, Crank-Nicolson steps, DDPM ancestral sampling.

A score mapping is any callable ``F(values, t) -> array`` acting on a batch of grid
values ``(B,) + grid``.  Langevin sampling expects the drift in the convention
``u <- u + h_t F(u, t) + sqrt(2 h_t) xi`` with ``xi ~ N(0, C)``, i.e. the output of a
network trained with the sigma-rescaled objective (see :class:`ModelScore` for the
conversion from the other conventions).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fno
from .corruption import DDPM, NCSN, NoiseSchedule
from .grf import MaternCovariance, apply_power_array
from .grid import GridFunction
from .spectral import multiply_array

ScoreFn = Callable[[np.ndarray, int], np.ndarray]


class ZeroRng:
    """Stand-in generator whose normal draws are all zero (for deterministic checks)."""

    def standard_normal(self, size=None):
        return np.zeros(() if size is None else size)


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule
    M: int = 200
    epsilon: float = 2e-5
    seed: int = 0
    chains: int = 1

    def __post_init__(self):
        if self.M < 1 or not self.epsilon > 0 or self.chains < 1:
            raise ValueError("need M >= 1, epsilon > 0 and chains >= 1")
        if self.schedule.kind != NCSN:
            raise ValueError("annealed Langevin needs an NCSN schedule")

    def step_size(self, t: int) -> float:
        s = self.schedule.sigmas
        return self.epsilon * s[t - 1] ** 2 / s[-1] ** 2


def _batch(u0):
    if isinstance(u0, GridFunction):
        return u0.values[None].copy(), u0.domain
    return np.array(u0, dtype=np.float64, copy=True), None


def annealed_langevin(F: ScoreFn, cfg: SamplerConfig, u0, rng):
    """Run all levels of annealed Langevin dynamics from ``u0``.

    ``u0`` is a GridFunction (returns a GridFunction) or a batch of chains.
    """
    u, dom = _batch(u0)
    s = cfg.schedule
    n = u.shape[-1]
    for t in range(1, s.T + 1):
        h = cfg.step_size(t)
        root = np.sqrt(2 * h)
        for step in range(cfg.M):
            xi = s.noise.sample_array(n, rng, u.shape[0])
            u = u + h * F(u, t) + root * xi
            if not np.all(np.isfinite(u)):
                raise FloatingPointError(f"non-finite Langevin state at level {t}, step {step + 1}")
    return GridFunction(dom, u[0]) if dom is not None else u


def initial_state(s: NoiseSchedule, n: int, rng, chains: int) -> np.ndarray:
    """Default starting point: a draw from the widest corruption level ``N(0, sigma_1^2 C)``."""
    return s.sigmas[0] * s.noise.sample_array(n, rng, chains)


def run_chains(F: ScoreFn, cfg: SamplerConfig, n: int, workers: int = 1, chunk: int = 256) -> np.ndarray:
    """Sample ``cfg.chains`` chains at resolution ``n``.

    Chains are split into fixed-size chunks, each with its own child seed, so the
    result does not depend on ``workers``.
    """
    sizes = [min(chunk, cfg.chains - i) for i in range(0, cfg.chains, chunk)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))

    def job(k):
        rng = np.random.default_rng(seeds[k])
        return annealed_langevin(F, cfg, initial_state(cfg.schedule, n, rng, sizes[k]), rng)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(k) for k in range(len(sizes))]
    return np.concatenate(parts)


def crank_nicolson_coefficients(h: float) -> tuple[float, float]:
    if not 0 < h <= 2:
        raise ValueError(f"Crank-Nicolson step needs h in (0, 2], got {h}")
    beta = np.sqrt(8 * h) / (2 + h)
    alpha = np.sqrt(max(0.0, 1 - beta**2))
    return float(alpha), float(beta)


def crank_nicolson_step(G: ScoreFn, u, t: int, h: float, rng, noise) -> np.ndarray | GridFunction:
    """``alpha u + (1 - alpha) G(u, t) + beta xi`` with ``beta^2 = 8h / (2 + h)^2``."""
    alpha, beta = crank_nicolson_coefficients(h)
    v, dom = _batch(u)
    xi = noise.sample_array(v.shape[-1], rng, v.shape[0])
    out = alpha * v + (1 - alpha) * G(v, t) + beta * xi
    return GridFunction(dom, out[0]) if dom is not None else out


def ddpm_posterior_variance(s: NoiseSchedule, t: int) -> float:
    return float((1 - s.alpha(t - 1)) * s.betas[t - 1] / (1 - s.alpha(t)))


def ddpm_sample(F: ScoreFn, s: NoiseSchedule, rng, n: int, chains: int = 1, u_T: np.ndarray | None = None) -> np.ndarray:
    """Ancestral sampling with a noise predictor; no noise is added at the final step."""
    if s.kind != DDPM:
        raise ValueError("ddpm_sample needs a DDPM schedule")
    u = s.noise.sample_array(n, rng, chains) if u_T is None else np.array(u_T, dtype=np.float64, copy=True)
    for t in range(s.T, 0, -1):
        b = s.betas[t - 1]
        u = (u - b / np.sqrt(1 - s.alpha(t)) * F(u, t)) / np.sqrt(1 - b)
        if t > 1:
            u = u + np.sqrt(ddpm_posterior_variance(s, t)) * s.noise.sample_array(n, rng, u.shape[0])
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite DDPM state at level {t}")
    return u


@dataclass(frozen=True)
class OracleScore:
    """Exact denoiser for Gaussian data ``N(m, C_d)`` corrupted by ``N(0, sigma_t^2 C)``.

    With ``rescaled=False`` this is the minimizer of the plain objective,
    ``-sigma^2 c/(d + sigma^2 c) (v - m)`` per mode; with ``rescaled=True`` it is divided
    by ``sigma_t^2``, which is the Langevin drift for ``N(m, C_d + sigma_t^2 C)``.
    """

    data_cov: MaternCovariance
    noise_cov: MaternCovariance
    sigmas: np.ndarray
    mean: np.ndarray | None = None
    rescaled: bool = False

    def __post_init__(self):
        if self.data_cov.domain != self.noise_cov.domain:
            raise ValueError("data and noise covariances live on different domains")
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))

    def multiplier(self, n: int, t: int) -> np.ndarray:
        d = self.data_cov.eigenvalues(n, "rfft")
        c = self.noise_cov.eigenvalues(n, "rfft")
        s2 = self.sigmas[t - 1] ** 2
        den = d + s2 * c
        out = np.zeros_like(den)
        pos = den > 0
        out[pos] = -c[pos] / den[pos]
        return out if self.rescaled else s2 * out

    def __call__(self, values: np.ndarray, t: int) -> np.ndarray:
        v = values if self.mean is None else values - self.mean
        return multiply_array(self.data_cov.domain, v, self.multiplier(values.shape[-1], t))


def oracle_score(o: OracleScore, v: GridFunction, t: int) -> GridFunction:
    return GridFunction(v.domain, o(v.values[None], t)[0])


#: output convention of a network trained with each objective
LOSS_OUTPUT = {
    "rescaled_dsm": "rescaled",
    "plain_dsm": "plain",
    "precond_dsm": "precond",
    "ddpm_w2": "noise",
    "ddpm_kl": "kl",
}


@dataclass
class ModelScore:
    """Adapt a trained network to a score mapping.

    ``output`` names the training convention:

    * ``"rescaled"``: used as is;
    * ``"plain"``: divided by ``sigma_t^2`` to give the Langevin drift;
    * ``"precond"``: the network predicts ``+eta``, so it is negated and divided by ``sigma_t^2``;
    * ``"noise"``: a DDPM noise predictor, used as is;
    * ``"kl"``: the network predicts ``coef_t C^{-1/2} u``; it is mapped back to the
      implied noise ``(v - sqrt(alpha_t) u_hat) / sqrt(1 - alpha_t)``.
    """

    model: fno.FnoModel
    schedule: NoiseSchedule
    output: str = "rescaled"

    def __post_init__(self):
        if self.output not in ("rescaled", "plain", "precond", "noise", "kl"):
            raise ValueError(f"unknown output convention {self.output!r}")
        ddpm = self.output in ("noise", "kl")
        if ddpm != (self.schedule.kind == DDPM):
            raise ValueError(f"output {self.output!r} does not match a {self.schedule.kind} schedule")
        if self.model.cfg.output_scaling == "inv_sigma" and ddpm:
            raise ValueError("inv_sigma output scaling needs an NCSN schedule")

    @classmethod
    def for_loss(cls, model: fno.FnoModel, schedule: NoiseSchedule, loss_kind: str) -> "ModelScore":
        return cls(model, schedule, LOSS_OUTPUT[str(loss_kind)])

    def __call__(self, values: np.ndarray, t: int) -> np.ndarray:
        s = self.schedule
        mask = s.domain.boundary_mask(values.shape[-1])
        cond = np.full(values.shape[0], float(s.conditioning(t)))
        out = fno.apply(self.model, values, cond, mask)
        if self.output == "plain":
            out = out / s.sigma(t) ** 2
        elif self.output == "precond":
            out = -out / s.sigma(t) ** 2
        elif self.output == "kl":
            a, a_prev, b = s.alpha(t), s.alpha(t - 1), s.betas[t - 1]
            coef = np.sqrt(a_prev) * b / (1 - a)
            u_hat = apply_power_array(s.noise, out, 0.5) / coef
            out = (values - np.sqrt(a) * u_hat) / np.sqrt(1 - a)
        return out
