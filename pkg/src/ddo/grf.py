"""Matérn-type Gaussian random fields, white noise and smoothing operators.

All covariances here are diagonal in the Laplacian eigenbasis of their domain, with
eigenvalues ``sigma**2 * (eig_k + tau**2) ** -alpha``.  On periodic domains the field
lives in the mean-zero subspace: the constant mode carries no variance and every
power of the operator annihilates it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import spectral
from .grid import DomainSpec, GridFunction, check_resolution, inner_array


@dataclass(frozen=True)
class MaternCovariance:
    domain: DomainSpec
    sigma: float
    tau: float
    alpha: float

    def __post_init__(self):
        if self.sigma < 0 or not self.tau > 0 or not self.alpha > 0:
            raise ValueError(f"invalid Matérn parameters sigma={self.sigma} tau={self.tau} alpha={self.alpha}")
        if not self.alpha > self.domain.dims / 2:
            raise ValueError(
                f"alpha={self.alpha} does not give a trace-class covariance in {self.domain.dims}D "
                f"(need alpha > {self.domain.dims / 2})"
            )

    def eigenvalues(self, n: int, layout: str = "full") -> np.ndarray:
        ev = spectral.laplacian_eigenvalues(self.domain, n, layout)
        lam = self.sigma**2 * (ev + self.tau**2) ** (-self.alpha)
        if self.domain.periodic:
            lam = np.where(ev == 0, 0.0, lam)
        return lam

    def power_multiplier(self, n: int, power: float, layout: str = "rfft") -> np.ndarray:
        lam = self.eigenvalues(n, layout)
        out = np.zeros_like(lam)
        pos = lam > 0
        out[pos] = lam[pos] ** power
        return out

    def sample_array(self, n: int, rng, size: int | tuple = ()) -> np.ndarray:
        """Draw centred fields, shape ``size + grid shape``.

        The coefficients of a standard white field against the orthonormal basis are
        i.i.d. standard normal once divided by ``sqrt(cell volume)``; scaling them by
        ``sqrt(lambda_k)`` gives the truncated Karhunen-Loeve expansion.
        """
        check_resolution(n)
        size = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        z = rng.standard_normal(size + self.domain.shape(n))
        m = self.power_multiplier(n, 0.5) / np.sqrt(self.domain.cell_volume(n))
        return spectral.multiply_array(self.domain, z, m)

    def to_dict(self) -> dict:
        d = {"sigma": self.sigma, "tau": self.tau, "alpha": self.alpha}
        d.update(self.domain.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict, domain: DomainSpec | None = None) -> "MaternCovariance":
        if domain is None:
            domain = DomainSpec.from_dict(d)
        return cls(domain, float(d["sigma"]), float(d["tau"]), float(d["alpha"]))


@dataclass(frozen=True)
class WhiteNoise:
    """Grid white noise: i.i.d. values with a fixed per-point standard deviation.

    Its coefficient variance equals the cell volume at every wavenumber, so it has no
    continuum limit in L2.
    """

    domain: DomainSpec
    sd: float = 1.0

    def sample_array(self, n: int, rng, size: int | tuple = ()) -> np.ndarray:
        check_resolution(n)
        size = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        z = self.sd * rng.standard_normal(size + self.domain.shape(n))
        mask = self.domain.boundary_mask(n)
        return z if mask is None else z * mask

    def to_dict(self) -> dict:
        d = {"white": True, "sd": self.sd}
        d.update(self.domain.to_dict())
        return d


def noise_from_dict(d: dict, domain: DomainSpec | None = None):
    if d.get("white"):
        return WhiteNoise(domain or DomainSpec.from_dict(d), float(d.get("sd", 1.0)))
    return MaternCovariance.from_dict(d, domain)


def eigenvalue(c: MaternCovariance, k) -> float:
    """Eigenvalue of ``c`` at the wavenumber ``k`` (int in 1D, pair in 2D)."""
    dom = c.domain
    ks = np.atleast_1d(np.asarray(k, dtype=np.float64))
    if dom.periodic:
        ev = float(np.sum((2 * np.pi * ks / dom.extent) ** 2))
        if ev == 0:
            return 0.0
    else:
        if ks[0] < 1:
            raise ValueError("Dirichlet wavenumbers start at 1")
        ev = float((np.pi * ks[0] / dom.extent) ** 2)
    return c.sigma**2 * (ev + c.tau**2) ** (-c.alpha)


def sample(c: MaternCovariance, mean: GridFunction | None, resolution: int, rng) -> GridFunction:
    if mean is not None and mean.resolution != resolution:
        raise ValueError(f"mean resolution {mean.resolution} != {resolution}")
    values = c.sample_array(resolution, rng)
    if mean is not None:
        values = values + mean.values
    return GridFunction(c.domain, values)


_POWERS = (1.0, 0.5, -0.5, -1.0)


def apply_power_array(c: MaternCovariance, values: np.ndarray, power: float) -> np.ndarray:
    n = values.shape[-1]
    return spectral.multiply_array(c.domain, values, c.power_multiplier(n, power))


def apply_power(c: MaternCovariance, u: GridFunction, power: float) -> GridFunction:
    if float(power) not in _POWERS:
        raise ValueError(f"power must be one of {_POWERS}, got {power}")
    return GridFunction(u.domain, apply_power_array(c, u.values, power))


def trace(c: MaternCovariance, resolution: int) -> float:
    """Partial trace over the wavenumbers represented at ``resolution``."""
    return float(np.sum(c.eigenvalues(resolution)))


def white_sample(w: WhiteNoise, resolution: int, rng) -> GridFunction:
    return GridFunction(w.domain, w.sample_array(resolution, rng))


def cameron_martin_norm(c: MaternCovariance, u: GridFunction) -> float:
    """``||C^{-1/2} u||`` on the represented band."""
    v = apply_power_array(c, u.values, -0.5)
    return float(np.sqrt(inner_array(c.domain, v, v)))


class SmoothingKind(enum.Enum):
    IDENTITY = "identity"
    HEAT = "heat"
    BLUR = "blur"
    SCALAR = "scalar"


@dataclass(frozen=True)
class SmoothingOperator:
    kind: SmoothingKind = SmoothingKind.IDENTITY
    param: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SmoothingKind(self.kind))
        if self.kind is SmoothingKind.HEAT and not self.param > 0:
            raise ValueError("heat semigroup time must be positive")
        if self.kind is SmoothingKind.BLUR and not self.param > 0:
            raise ValueError("blur bandwidth must be positive")

    @classmethod
    def identity(cls):
        return cls(SmoothingKind.IDENTITY)

    @classmethod
    def heat(cls, t: float):
        return cls(SmoothingKind.HEAT, float(t))

    @classmethod
    def blur(cls, bandwidth: float):
        return cls(SmoothingKind.BLUR, float(bandwidth))

    @classmethod
    def scalar(cls, f: float):
        return cls(SmoothingKind.SCALAR, float(f))

    def of_eigenvalue(self, ev: np.ndarray) -> np.ndarray:
        if self.kind is SmoothingKind.HEAT:
            return np.exp(-self.param * ev)
        if self.kind is SmoothingKind.BLUR:
            return np.exp(-0.5 * self.param**2 * ev)
        if self.kind is SmoothingKind.SCALAR:
            return np.full_like(ev, self.param)
        return np.ones_like(ev)

    @property
    def is_identity(self) -> bool:
        return self.kind is SmoothingKind.IDENTITY or (self.kind is SmoothingKind.SCALAR and self.param == 1.0)

    def apply_array(self, domain: DomainSpec, values: np.ndarray) -> np.ndarray:
        if self.kind is SmoothingKind.IDENTITY:
            return np.array(values, dtype=np.float64, copy=True)
        if self.kind is SmoothingKind.SCALAR:
            return self.param * values
        n = values.shape[-1]
        return spectral.multiply_array(domain, values, spectral.eigen_multiplier(domain, n, self.of_eigenvalue))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "param": self.param}


def smooth(a: SmoothingOperator, u: GridFunction) -> GridFunction:
    return GridFunction(u.domain, a.apply_array(u.domain, u.values))


def containment_ratio(ops: Sequence[SmoothingOperator], covs: Sequence[MaternCovariance], resolution: int) -> float:
    """``max_{t,k} a_t(k)**2 / lambda_t(k)`` over the represented band.

    A numerical stand-in for ``A_t(H) ⊆ C_t^{1/2}(H)``: the ratio stays bounded under
    refinement exactly when the smoothing beats the covariance decay.
    """
    worst = 0.0
    for a, c in zip(ops, covs):
        ev = spectral.laplacian_eigenvalues(c.domain, resolution)
        lam = c.eigenvalues(resolution)
        pos = lam > 0
        ratio = a.of_eigenvalue(ev[pos]) ** 2 / lam[pos]
        worst = max(worst, float(ratio.max()))
    return worst
