"""Transforms that diagonalize the Laplacian, spectral multipliers and spectra.

Coefficients are taken against an L2-orthonormal basis of the physical domain, so
they do not depend on the grid resolution:

* periodic: ``e_k(x) = exp(2 pi i k.x / L) / L**(d/2)``, stored in FFT ordering;
* Dirichlet: ``phi_k(x) = sqrt(2/L) sin(pi k x / L)`` for ``k = 1 .. n-1``.

Array-level helpers act on the trailing grid axes and broadcast over any leading
batch axes.  The rfft layout (last axis halved) is used internally wherever only a
real field is involved.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .grid import Dataset, DomainSpec, GridFunction, check_resolution


@dataclass(frozen=True)
class SpectralField:
    domain: DomainSpec
    resolution: int
    coeffs: np.ndarray


def _axes(domain: DomainSpec) -> tuple[int, ...]:
    return tuple(range(-domain.dims, 0))


def _int_freqs(n: int) -> np.ndarray:
    return np.rint(np.fft.fftfreq(n) * n).astype(np.int64)


@lru_cache(maxsize=128)
def _wavenumbers(domain: DomainSpec, n: int, layout: str):
    if not domain.periodic:
        return np.arange(1, n)
    k = _int_freqs(n)
    kl = np.arange(n // 2 + 1) if layout == "rfft" else k
    if domain.dims == 1:
        return kl
    kx, ky = np.meshgrid(k, kl, indexing="ij")
    return np.stack([kx, ky])


def wavenumbers(domain: DomainSpec, n: int, layout: str = "full") -> np.ndarray:
    """Integer wavenumbers aligned with the coefficient layout.

    1D: shape ``coeff_shape``.  2D: shape ``(2,) + coeff_shape``.
    """
    return _wavenumbers(domain, n, layout).copy()


@lru_cache(maxsize=128)
def _eigs(domain: DomainSpec, n: int, layout: str) -> np.ndarray:
    k = _wavenumbers(domain, n, layout)
    if not domain.periodic:
        ev = (np.pi * k / domain.extent) ** 2
    else:
        scale = (2 * np.pi / domain.extent) ** 2
        ev = scale * (k.astype(np.float64) ** 2 if domain.dims == 1 else np.sum(k.astype(np.float64) ** 2, axis=0))
    ev = np.asarray(ev, dtype=np.float64)
    ev.flags.writeable = False
    return ev


def laplacian_eigenvalues(domain: DomainSpec, n: int, layout: str = "full") -> np.ndarray:
    """Eigenvalues of the negative Laplacian on each represented wavenumber."""
    return _eigs(domain, n, layout)


def coeff_shape(domain: DomainSpec, n: int, layout: str = "full") -> tuple[int, ...]:
    if not domain.periodic:
        return (n - 1,)
    if layout == "rfft":
        return (n,) * (domain.dims - 1) + (n // 2 + 1,)
    return (n,) * domain.dims


# -- array-level transforms -------------------------------------------------

def _periodic_scale(domain: DomainSpec, n: int) -> float:
    return domain.extent ** (domain.dims / 2) / n**domain.dims


def _sine_scale(domain: DomainSpec, n: int) -> float:
    return 0.5 * np.sqrt(2.0 / domain.extent)


def forward_array(domain: DomainSpec, values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    if domain.periodic:
        return sfft.fftn(values, axes=_axes(domain)) * _periodic_scale(domain, n)
    return sfft.dst(values[..., :-1], type=1, axis=-1) * (_sine_scale(domain, n) * domain.spacing(n))


def inverse_array(domain: DomainSpec, coeffs: np.ndarray, n: int | None = None) -> np.ndarray:
    if domain.periodic:
        n = coeffs.shape[-1]
        out = sfft.ifftn(coeffs, axes=_axes(domain)).real
        return out / _periodic_scale(domain, n)
    n = coeffs.shape[-1] + 1
    out = np.zeros(coeffs.shape[:-1] + (n,))
    out[..., :-1] = sfft.dst(coeffs, type=1, axis=-1) * _sine_scale(domain, n)
    return out


def rforward_array(domain: DomainSpec, values: np.ndarray) -> np.ndarray:
    """Like :func:`forward_array` but in the rfft layout for periodic domains."""
    if not domain.periodic:
        return forward_array(domain, values)
    n = values.shape[-1]
    return sfft.rfftn(values, axes=_axes(domain)) * _periodic_scale(domain, n)


def rinverse_array(domain: DomainSpec, coeffs: np.ndarray, n: int) -> np.ndarray:
    if not domain.periodic:
        return inverse_array(domain, coeffs)
    shape = domain.shape(n)
    return sfft.irfftn(coeffs, s=shape, axes=_axes(domain)) / _periodic_scale(domain, n)


def multiply_array(domain: DomainSpec, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    """Apply a diagonal operator given in the rfft (periodic) or sine layout."""
    n = values.shape[-1]
    if domain.periodic:
        axes = _axes(domain)
        return sfft.irfftn(sfft.rfftn(values, axes=axes) * multiplier, s=domain.shape(n), axes=axes)
    out = np.zeros_like(values, dtype=np.float64)
    # DST-I is its own inverse up to the factor 2n
    out[..., :-1] = sfft.dst(sfft.dst(values[..., :-1], type=1, axis=-1) * multiplier, type=1, axis=-1) / (2 * n)
    return out


def eigen_multiplier(domain: DomainSpec, n: int, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Evaluate ``f(eigenvalue)`` in the layout expected by :func:`multiply_array`."""
    m = np.asarray(f(laplacian_eigenvalues(domain, n, "rfft")), dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("multiplier is not finite on every represented wavenumber")
    return m


def _resize_axis(c: np.ndarray, axis: int, n_new: int) -> np.ndarray:
    n = c.shape[axis]
    if n_new == n:
        return c
    c = np.moveaxis(c, axis, -1)
    out = np.zeros(c.shape[:-1] + (n_new,), dtype=c.dtype)
    if n_new > n:
        h = n // 2
        out[..., :h] = c[..., :h]
        out[..., n_new - h + 1:] = c[..., h + 1:]
        out[..., h] = 0.5 * c[..., h]
        out[..., n_new - h] = 0.5 * c[..., h]
    else:
        h = n_new // 2
        out[..., :h] = c[..., :h]
        out[..., h + 1:] = c[..., n - h + 1:]
        out[..., h] = c[..., h] + c[..., n - h]
    return np.moveaxis(out, -1, axis)


def resample_array(domain: DomainSpec, values: np.ndarray, n_new: int) -> np.ndarray:
    check_resolution(n_new)
    n = values.shape[-1]
    if n_new == n:
        return np.array(values, dtype=np.float64, copy=True)
    c = forward_array(domain, values)
    if domain.periodic:
        for ax in _axes(domain):
            c = _resize_axis(c, ax, n_new)
        return inverse_array(domain, c)
    out = np.zeros(c.shape[:-1] + (n_new - 1,))
    m = min(n, n_new) - 1
    out[..., :m] = c[..., :m]
    return inverse_array(domain, out)


# -- GridFunction-level operations ------------------------------------------

def forward(u: GridFunction) -> SpectralField:
    return SpectralField(u.domain, u.resolution, forward_array(u.domain, u.values))


def inverse(s: SpectralField) -> GridFunction:
    if s.coeffs.shape != coeff_shape(s.domain, s.resolution):
        raise ValueError(f"coefficient shape {s.coeffs.shape} does not match resolution {s.resolution}")
    return GridFunction(s.domain, inverse_array(s.domain, s.coeffs, s.resolution))


def apply_multiplier(u: GridFunction, m) -> GridFunction:
    """Multiply the coefficients of ``u`` by ``m(k)``.

    ``m`` is either an array in the full coefficient layout or a callable receiving the
    integer wavenumbers (see :func:`wavenumbers`).  Periodic multipliers are expected
    to be even in ``k``; the real part of the result is returned.
    """
    if callable(m):
        m = m(wavenumbers(u.domain, u.resolution))
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("multiplier is not finite on every represented wavenumber")
    s = forward(u)
    return inverse(SpectralField(s.domain, s.resolution, s.coeffs * m))


def apply_eigen_multiplier(u: GridFunction, f: Callable[[np.ndarray], np.ndarray]) -> GridFunction:
    """Apply ``f(-Laplacian)`` through its eigenvalues."""
    m = eigen_multiplier(u.domain, u.resolution, f)
    return GridFunction(u.domain, multiply_array(u.domain, u.values, m))


def dealias_mask(domain: DomainSpec, n: int, layout: str = "full") -> np.ndarray:
    k = _wavenumbers(domain, n, layout)
    if domain.dims == 1:
        return np.abs(k) <= n / 3
    return np.all(np.abs(k) <= n / 3, axis=0)


def dealias_two_thirds(s: SpectralField) -> SpectralField:
    mask = dealias_mask(s.domain, s.resolution)
    return SpectralField(s.domain, s.resolution, np.where(mask, s.coeffs, 0))


def average_spectrum_array(domain: DomainSpec, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if samples.shape[0] == 0:
        raise ValueError("average spectrum of an empty dataset")
    n = samples.shape[-1]
    c = np.abs(forward_array(domain, samples)).mean(axis=0)
    k = _wavenumbers(domain, n, "full")
    if not domain.periodic:
        return k.copy(), c
    if domain.dims == 1:
        keep = slice(0, n // 2 + 1)
        return np.abs(k[keep]), c[keep]
    kr = np.rint(np.sqrt(np.sum(k.astype(np.float64) ** 2, axis=0))).astype(np.int64).ravel()
    sums = np.bincount(kr, weights=c.ravel())
    counts = np.bincount(kr)
    nz = counts > 0
    return np.arange(len(counts))[nz], sums[nz] / counts[nz]


def average_spectrum(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Mean coefficient magnitude per wavenumber (radially binned by rounded |k| in 2D)."""
    return average_spectrum_array(d.domain, d.samples)


def write_spectrum_csv(path: str | Path, k: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mean_abs_coeff"])
        for ki, vi in zip(k, values):
            w.writerow([int(ki), repr(float(vi))])
