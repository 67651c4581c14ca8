"""Reference datasets: a two-component Gaussian mixture and forced 2D Navier-Stokes.

The Navier-Stokes generator integrates the vorticity form on the unit torus,

    d_t w + v . grad w - eps Lap w = f,    v = grad^perp psi,  -Lap psi = w,

from ``w = 0`` with a random, time-independent forcing ``f`` and stores ``w(T)``.
The solver is pseudo-spectral with 2/3 dealiasing; diffusion is integrated exactly
and advection plus forcing with Heun's method (an integrating-factor RK2 scheme).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft

from . import spectral
from .grf import MaternCovariance, apply_power_array
from .grid import Dataset, DomainSpec, GridFunction, check_resolution, inner_array


class NumericalInstability(FloatingPointError):
    pass


# -- Gaussian mixture --------------------------------------------------------

MEANS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin_half": lambda x: np.sin(x / 2),
    "ramp": lambda x: -10.0 / 6.0 * x + 5.0,
    "zero": lambda x: np.zeros_like(x),
}


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """``u ~ N(f1, C)`` with probability ``p`` and ``N(f2, C)`` otherwise (``f2 = -f1`` by default)."""

    cov: MaternCovariance
    mean: str = "sin_half"
    p: float = 0.5
    second_mean: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"mixture weight p={self.p} not in [0, 1]")
        for name in (self.mean, self.second_mean):
            if name is not None and name not in MEANS:
                raise ValueError(f"unknown mean {name!r}; choose from {sorted(MEANS)}")
        if self.cov.domain.dims != 1:
            raise ValueError("the mixture generator is one-dimensional")

    @property
    def domain(self) -> DomainSpec:
        return self.cov.domain

    def means(self, n: int) -> tuple[GridFunction, GridFunction]:
        """Both component means on the grid (Dirichlet boundary node pinned to zero)."""
        f1 = GridFunction.from_callable(self.domain, n, MEANS[self.mean])
        if self.second_mean is None:
            return f1, -f1
        return f1, GridFunction.from_callable(self.domain, n, MEANS[self.second_mean])

    def to_dict(self) -> dict:
        return {"mean": self.mean, "second_mean": self.second_mean, "p": self.p, "covariance": self.cov.to_dict()}


def gen_gaussian_mixture(spec: GaussianMixtureSpec, N: int, resolution: int, rng) -> Dataset:
    check_resolution(resolution)
    f1, f2 = spec.means(resolution)
    first = rng.random(N) < spec.p
    noise = spec.cov.sample_array(resolution, rng, N)
    samples = np.where(first[:, None], f1.values, f2.values) + noise
    meta = {"generator": "gaussian_mixture", "spec": spec.to_dict(), "component_one": int(first.sum())}
    return Dataset(spec.domain, resolution, samples, meta)


def cameron_martin_norms(u: Callable[[np.ndarray], np.ndarray], noise: MaternCovariance, resolutions) -> np.ndarray:
    """``||C^{-1/2} u||`` of a closed-form function at several resolutions.

    A value that keeps growing under refinement signals that ``u`` is outside the
    Cameron-Martin space of ``noise``.
    """
    out = []
    for n in resolutions:
        v = GridFunction.from_callable(noise.domain, n, u).values
        w = apply_power_array(noise, v, -0.5)
        out.append(float(np.sqrt(inner_array(noise.domain, w, w))))
    return np.array(out)


def warn_if_outside_cm(spec: GaussianMixtureSpec, noise: MaternCovariance, resolutions=(256, 512, 1024, 2048),
                       tol: float = 0.05) -> bool:
    """Warn when the first mean looks outside the Cameron-Martin space of ``noise``.

    Inside the space the squared norm converges, so its increments over successive
    doublings shrink geometrically.  The mean is flagged when the last refinement still
    adds more than ``tol`` (relative) and the increments are not shrinking by half.
    """
    sq = cameron_martin_norms(MEANS[spec.mean], noise, resolutions) ** 2
    inc = np.diff(sq)
    outside = bool(inc[-1] > tol * sq[-2] and (len(inc) < 2 or inc[-1] >= 0.5 * inc[-2]))
    if outside:
        warnings.warn(
            f"mean {spec.mean!r} looks outside the Cameron-Martin space of the noise: "
            f"||C^-1/2 f||^2 still grows {inc[-1] / sq[-2]:.1%} from res {resolutions[-2]} to {resolutions[-1]}",
            stacklevel=2,
        )
    return outside


# -- Navier-Stokes -----------------------------------------------------------

@dataclass(frozen=True)
class NavierStokesSpec:
    resolution: int = 64
    viscosity: float = 1.0 / 500.0
    final_time: float = 5.0
    dt: float | None = None
    forcing_alpha: float = 4.0
    forcing_sigma: float = 3.0 * np.sqrt(3.0)
    forcing_tau: float = 3.0
    cfl: float = 0.5

    def __post_init__(self):
        check_resolution(self.resolution)
        if self.viscosity < 0 or not self.final_time > 0 or not self.cfl > 0:
            raise ValueError("need viscosity >= 0, final_time > 0 and cfl > 0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def domain(self) -> DomainSpec:
        return DomainSpec.torus(2, 1.0)

    @property
    def step(self) -> float:
        """Time step; defaults to 1e-3 at resolution 64, scaled with the grid spacing."""
        return self.dt if self.dt is not None else 1e-3 * 64 / self.resolution

    @property
    def steps(self) -> int:
        return max(1, int(round(self.final_time / self.step)))

    @property
    def forcing(self) -> MaternCovariance:
        return MaternCovariance(self.domain, self.forcing_sigma, self.forcing_tau, self.forcing_alpha)

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution, "viscosity": self.viscosity, "final_time": self.final_time,
            "dt": self.step, "forcing_alpha": self.forcing_alpha, "forcing_sigma": self.forcing_sigma,
            "forcing_tau": self.forcing_tau, "cfl": self.cfl,
        }


@dataclass
class _Vorticity:
    """Wavenumber tables for the rfft layout on the unit torus."""

    n: int
    kx: np.ndarray = field(init=False)
    ky: np.ndarray = field(init=False)
    lap: np.ndarray = field(init=False)
    inv_lap: np.ndarray = field(init=False)
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        dom = DomainSpec.torus(2, 1.0)
        k = spectral.wavenumbers(dom, self.n, "rfft").astype(np.float64)
        self.kx, self.ky = 2 * np.pi * k[0], 2 * np.pi * k[1]
        self.lap = spectral.laplacian_eigenvalues(dom, self.n, "rfft")
        self.inv_lap = np.zeros_like(self.lap)
        self.inv_lap[self.lap > 0] = 1.0 / self.lap[self.lap > 0]
        self.mask = spectral.dealias_mask(dom, self.n, "rfft").astype(np.float64)

    def _phys(self, c):
        return sfft.irfft2(c, s=(self.n, self.n))

    def velocity(self, w_hat):
        psi = w_hat * self.inv_lap * self.mask
        return self._phys(1j * self.ky * psi), self._phys(-1j * self.kx * psi)

    def advection(self, w_hat):
        """``-(v . grad w)`` in the rfft layout, dealiased."""
        vx, vy = self.velocity(w_hat)
        wm = w_hat * self.mask
        wx, wy = self._phys(1j * self.kx * wm), self._phys(1j * self.ky * wm)
        out = -sfft.rfft2(vx * wx + vy * wy) * self.mask
        out[..., 0, 0] = 0.0
        return out

    def max_speed(self, w_hat) -> float:
        vx, vy = self.velocity(w_hat)
        return float(np.sqrt(np.max(vx * vx + vy * vy)))


_TABLES: dict[int, _Vorticity] = {}


def _tables(n: int) -> _Vorticity:
    if n not in _TABLES:
        _TABLES[n] = _Vorticity(n)
    return _TABLES[n]


def ns_step_array(w_hat: np.ndarray, f_hat: np.ndarray, viscosity: float, dt: float, cfl: float = 0.5) -> np.ndarray:
    """One integrating-factor Heun step on unnormalized rfft2 coefficients (batched)."""
    n = w_hat.shape[-2]
    ops = _tables(n)
    speed = ops.max_speed(w_hat)
    if dt * speed * n > cfl:
        raise NumericalInstability(f"CFL violated: dt*max|v|*n = {dt * speed * n:.3f} > {cfl}")
    E = np.exp(-viscosity * ops.lap * dt)
    k1 = ops.advection(w_hat) + f_hat
    w_star = E * (w_hat + dt * k1)
    k2 = ops.advection(w_star) + f_hat
    out = E * (w_hat + 0.5 * dt * k1) + 0.5 * dt * k2
    out[..., 0, 0] = 0.0
    if not np.all(np.isfinite(out)):
        raise NumericalInstability("non-finite vorticity")
    return out


def _to_rfft(s: spectral.SpectralField) -> np.ndarray:
    n = s.resolution
    return s.coeffs[..., : n // 2 + 1] * n**2  # orthonormal coefficients on the unit torus -> raw rfft2


def _from_rfft(c: np.ndarray, n: int, domain: DomainSpec) -> spectral.SpectralField:
    values = sfft.irfft2(c, s=(n, n))
    return spectral.SpectralField(domain, n, spectral.forward_array(domain, values))


def ns_step(omega: spectral.SpectralField, forcing: spectral.SpectralField, spec: NavierStokesSpec,
            dt: float | None = None) -> spectral.SpectralField:
    if omega.domain != spec.domain or forcing.domain != spec.domain:
        raise ValueError("Navier-Stokes fields must live on the unit torus")
    dt = spec.step if dt is None else dt
    out = ns_step_array(_to_rfft(omega), _to_rfft(forcing), spec.viscosity, dt, spec.cfl)
    return _from_rfft(out, omega.resolution, omega.domain)


def ns_integrate(w0: np.ndarray, f: np.ndarray, viscosity: float, dt: float, steps: int, cfl: float = 0.5,
                 callback: Callable | None = None) -> np.ndarray:
    """Integrate grid vorticity ``w0`` (batched) for ``steps`` steps under forcing ``f``."""
    w_hat = sfft.rfft2(w0)
    f_hat = sfft.rfft2(f)
    f_hat[..., 0, 0] = 0.0
    w_hat[..., 0, 0] = 0.0
    for i in range(steps):
        w_hat = ns_step_array(w_hat, f_hat, viscosity, dt, cfl)
        if callback is not None:
            callback(i + 1, w_hat)
    return sfft.irfft2(w_hat, s=w0.shape[-2:])


def gen_navier_stokes(spec: NavierStokesSpec, N: int, rng, workers: int = 1, chunk: int = 32) -> Dataset:
    """Final vorticity for ``N`` random forcings.

    Samples are processed in fixed-size chunks with child seeds, so the output does
    not depend on ``workers``.
    """
    n = spec.resolution
    root = np.random.SeedSequence(int(rng.integers(2**63)))
    sizes = [min(chunk, N - i) for i in range(0, N, chunk)]
    seeds = root.spawn(len(sizes))
    cov = spec.forcing

    def job(k):
        f = cov.sample_array(n, np.random.default_rng(seeds[k]), sizes[k])
        return ns_integrate(np.zeros_like(f), f, spec.viscosity, spec.step, spec.steps, spec.cfl)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(k) for k in range(len(sizes))]
    samples = np.concatenate(parts) if parts else np.zeros((0, n, n))
    return Dataset(spec.domain, n, samples, {"generator": "navier_stokes", "spec": spec.to_dict()})


def energy_enstrophy(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(1/2 int |grad psi|^2, 1/2 int w^2)`` for grid vorticity on the unit torus."""
    dom = DomainSpec.torus(2, 1.0)
    c = spectral.rforward_array(dom, w)
    lam = spectral.laplacian_eigenvalues(dom, w.shape[-1], "rfft")
    weight = np.full(lam.shape, 2.0)
    weight[..., 0] = 1.0
    n = w.shape[-1]
    if n % 2 == 0:
        weight[..., n // 2] = 1.0
    inv = np.zeros_like(lam)
    inv[lam > 0] = 1.0 / lam[lam > 0]
    energy = 0.5 * np.sum(weight * np.abs(c) ** 2 * inv, axis=(-2, -1))
    enstrophy = 0.5 * inner_array(dom, w, w)
    return energy, enstrophy
