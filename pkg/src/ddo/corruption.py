"""Noise schedules and the forward corruption ``v_t = A_t u + eta_t``.

Levels are 1-based: ``t = 1`` is the noisiest level.  NCSN schedules use
``eta_t ~ N(0, sigma_t^2 C)`` with an optional smoothing family ``A_t``; DDPM schedules
use ``A_t = sqrt(alpha_t)`` and ``eta_t ~ N(0, (1 - alpha_t) C)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grf import MaternCovariance, SmoothingKind, SmoothingOperator, WhiteNoise, noise_from_dict
from .grid import DomainSpec, GridFunction

NCSN = "ncsn"
DDPM = "ddpm"


def geometric_sigmas(sigma_1: float, sigma_T: float, T: int) -> np.ndarray:
    if T < 1 or not sigma_1 > 0 or not sigma_T > 0:
        raise ValueError("need T >= 1 and positive endpoints")
    if T == 1:
        return np.array([float(sigma_1)])
    r = (sigma_T / sigma_1) ** (1.0 / (T - 1))
    sig = sigma_1 * r ** np.arange(T)
    sig[-1] = sigma_T
    return sig


def ddpm_alphas(betas: Sequence[float]) -> np.ndarray:
    return np.cumprod(1.0 - np.asarray(betas, dtype=np.float64))


def log_times(t0: float, t1: float, T: int) -> np.ndarray:
    """Heat-semigroup times from ``t1`` (level 1) down to ``t0`` (level T) on a log grid."""
    if not 0 < t0 <= t1:
        raise ValueError("need 0 < t0 <= t1")
    return np.geomspace(t1, t0, T)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: str
    noise: MaternCovariance | WhiteNoise
    sigmas: np.ndarray | None = None
    betas: np.ndarray | None = None
    smoothing: tuple[SmoothingOperator, ...] | None = None
    smoothing_config: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == NCSN:
            sig = np.asarray(self.sigmas, dtype=np.float64)
            if sig.ndim != 1 or len(sig) < 1 or np.any(sig <= 0) or np.any(np.diff(sig) > 0):
                raise ValueError("NCSN sigmas must be positive and non-increasing")
            object.__setattr__(self, "sigmas", sig)
        elif self.kind == DDPM:
            b = np.asarray(self.betas, dtype=np.float64)
            if b.ndim != 1 or len(b) < 1 or np.any(b <= 0) or np.any(b >= 1) or np.any(np.diff(b) < 0):
                raise ValueError("DDPM betas must satisfy 0 < b_1 <= ... <= b_T < 1")
            object.__setattr__(self, "betas", b)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.smoothing is not None:
            if self.kind != NCSN:
                raise ValueError("smoothing families are only defined for NCSN schedules")
            if len(self.smoothing) != self.T:
                raise ValueError("need one smoothing operator per level")
            object.__setattr__(self, "smoothing", tuple(self.smoothing))

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return (self.kind == other.kind and self.noise == other.noise and self.smoothing == other.smoothing
                and all(np.array_equal(a, b) for a, b in ((self.sigmas, other.sigmas), (self.betas, other.betas))))

    __hash__ = None

    @classmethod
    def ncsn(cls, noise, sigma_1: float = 1.0, sigma_T: float = 0.01, T: int = 10,
             smoothing: Sequence[SmoothingOperator] | None = None, smoothing_config: dict | None = None):
        return cls(NCSN, noise, sigmas=geometric_sigmas(sigma_1, sigma_T, T),
                   smoothing=smoothing, smoothing_config=smoothing_config)

    @classmethod
    def ddpm(cls, noise, betas: Sequence[float]):
        return cls(DDPM, noise, betas=np.asarray(betas, dtype=np.float64))

    @property
    def domain(self) -> DomainSpec:
        return self.noise.domain

    @property
    def T(self) -> int:
        return len(self.sigmas) if self.kind == NCSN else len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return ddpm_alphas(self.betas)

    @property
    def white(self) -> bool:
        return isinstance(self.noise, WhiteNoise)

    def check_level(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise IndexError(f"level {t} out of range 1..{self.T}")
        return t.astype(np.int64)

    def alpha(self, t) -> np.ndarray:
        """``alpha_t`` with the convention ``alpha_0 = 1``."""
        a = np.concatenate([[1.0], self.alphas])
        return a[np.asarray(t)]

    def sigma(self, t) -> np.ndarray:
        return self.sigmas[self.check_level(t) - 1]

    def conditioning(self, t) -> np.ndarray:
        """Scalar fed to the network: ``log sigma_t`` (NCSN) or ``t / T`` (DDPM)."""
        t = self.check_level(t)
        if self.kind == NCSN:
            return np.log(self.sigmas[t - 1])
        return t / self.T

    def clean_scale(self, t) -> np.ndarray:
        t = self.check_level(t)
        if self.kind == NCSN:
            return np.ones(t.shape)
        return np.sqrt(self.alpha(t))

    def noise_scale(self, t) -> np.ndarray:
        t = self.check_level(t)
        if self.kind == NCSN:
            return self.sigmas[t - 1]
        return np.sqrt(1.0 - self.alpha(t))

    def apply_smoothing(self, values: np.ndarray, t: np.ndarray) -> np.ndarray:
        """``A_t u`` for a batch; ``t`` has one entry per batch row."""
        t = self.check_level(t)
        if self.smoothing is None:
            return np.array(values, dtype=np.float64, copy=True)
        out = np.empty_like(values, dtype=np.float64)
        for level in np.unique(t):
            rows = t == level
            out[rows] = self.smoothing[level - 1].apply_array(self.domain, values[rows])
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "T": self.T, "covariance": self.noise.to_dict()}
        if self.kind == NCSN:
            d["sigma_1"] = float(self.sigmas[0])
            d["sigma_T"] = float(self.sigmas[-1])
        else:
            d["betas"] = [float(b) for b in self.betas]
        d["smoothing"] = self.smoothing_config
        return d


def smoothing_family(config: dict | None, T: int) -> tuple[SmoothingOperator, ...] | None:
    """Build ``A_1 .. A_T`` from a JSON fragment (``None`` means identity)."""
    if not config:
        return None
    kind = config["kind"]
    if kind == "identity":
        return None
    if kind == "heat":
        return tuple(SmoothingOperator.heat(s) for s in log_times(float(config["t0"]), float(config["t1"]), T))
    if kind == "blur":
        return (SmoothingOperator.blur(float(config["bandwidth"])),) * T
    if kind == "scalar":
        return (SmoothingOperator.scalar(float(config["value"])),) * T
    raise ValueError(f"unknown smoothing kind {kind!r}")


def schedule_from_dict(d: dict, domain: DomainSpec | None = None) -> NoiseSchedule:
    noise = noise_from_dict(d["covariance"], domain)
    kind = d.get("kind", NCSN)
    if kind == NCSN:
        T = int(d.get("T", 10))
        smoothing_cfg = d.get("smoothing")
        return NoiseSchedule.ncsn(
            noise, float(d.get("sigma_1", 1.0)), float(d.get("sigma_T", 0.01)), T,
            smoothing=smoothing_family(smoothing_cfg, T), smoothing_config=smoothing_cfg,
        )
    if kind == DDPM:
        if "betas" in d:
            betas = d["betas"]
        else:
            betas = np.linspace(float(d["beta_1"]), float(d["beta_T"]), int(d["T"]))
        return NoiseSchedule.ddpm(noise, betas)
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class CorruptionSample:
    t: int
    clean: GridFunction
    noisy: GridFunction
    noise: GridFunction


def corrupt_array(s: NoiseSchedule, values: np.ndarray, t, rng, base_noise: np.ndarray | None = None):
    """Batched corruption.

    Returns ``(clean, noise, noisy, base_noise)`` where ``base_noise ~ N(0, C)`` (or grid
    white noise) and ``noise = noise_scale(t) * base_noise``.
    """
    t = s.check_level(np.broadcast_to(np.asarray(t), values.shape[:1]))
    n = values.shape[-1]
    if base_noise is None:
        base_noise = s.noise.sample_array(n, rng, values.shape[0])
    bshape = (-1,) + (1,) * s.domain.dims
    clean = s.apply_smoothing(values, t)
    if s.kind == DDPM:
        clean = clean * s.clean_scale(t).reshape(bshape)
    noise = base_noise * s.noise_scale(t).reshape(bshape)
    return clean, noise, clean + noise, base_noise


def corrupt(s: NoiseSchedule, u: GridFunction, t: int, rng) -> CorruptionSample:
    s.check_level(t)
    clean, noise, noisy, _ = corrupt_array(s, u.values[None], np.array([t]), rng)
    dom = u.domain
    return CorruptionSample(int(t), GridFunction(dom, clean[0]), GridFunction(dom, noisy[0]), GridFunction(dom, noise[0]))
