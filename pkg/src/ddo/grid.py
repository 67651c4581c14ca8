"""Discretized functions on uniform grids and the on-disk dataset format.

A function on the 1D interval ``(0, L)`` or the 2D torus ``[0, L)^2`` is stored by
its values on a uniform grid with ``n`` points per dimension, ``n`` a power of two.

Periodic grids use the nodes ``x_j = j L / n`` for ``j = 0 .. n-1``.  Dirichlet grids
use ``x_j = j L / n`` for ``j = 1 .. n``; the last node sits on the right boundary and
always carries the value zero, so only the ``n - 1`` interior values are free.  Both
conventions nest exactly: every other node of a ``2n`` grid is a node of the ``n`` grid.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

MAGIC = b"DDOF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdIQ")


class Boundary(enum.IntEnum):
    PERIODIC = 0
    DIRICHLET = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file is malformed."""


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 2 and (n & (n - 1)) == 0


def check_resolution(n: int) -> int:
    if not is_power_of_two(n):
        raise ValueError(f"resolution must be a power of two >= 2, got {n!r}")
    return int(n)


@dataclass(frozen=True)
class DomainSpec:
    dims: int = 1
    extent: float = 2 * np.pi
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ValueError(f"dims must be 1 or 2, got {self.dims}")
        if not self.extent > 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.dims == 2 and self.boundary is not Boundary.PERIODIC:
            raise ValueError("2D domains must be periodic (torus)")

    @classmethod
    def interval(cls, extent: float = 2 * np.pi, boundary=Boundary.DIRICHLET) -> "DomainSpec":
        return cls(1, float(extent), Boundary(boundary))

    @classmethod
    def torus(cls, dims: int = 2, extent: float = 1.0) -> "DomainSpec":
        return cls(dims, float(extent), Boundary.PERIODIC)

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def shape(self, n: int) -> tuple[int, ...]:
        return (n,) * self.dims

    def spacing(self, n: int) -> float:
        return self.extent / n

    def cell_volume(self, n: int) -> float:
        return self.spacing(n) ** self.dims

    def nodes(self, n: int) -> np.ndarray:
        """1D node coordinates; for 2D the same vector serves both axes."""
        j = np.arange(n) if self.periodic else np.arange(1, n + 1)
        return j * self.spacing(n)

    def mesh(self, n: int) -> tuple[np.ndarray, ...]:
        x = self.nodes(n)
        if self.dims == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def boundary_mask(self, n: int) -> np.ndarray | None:
        """Multiplicative mask zeroing the boundary node, or None for periodic grids."""
        if self.periodic:
            return None
        mask = np.ones(n)
        mask[-1] = 0.0
        return mask

    def to_dict(self) -> dict:
        return {"dims": self.dims, "extent": self.extent, "boundary": self.boundary.name.lower()}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        b = d.get("boundary", "dirichlet")
        if isinstance(b, str):
            b = Boundary[b.upper()]
        return cls(int(d.get("dims", 1)), float(d.get("extent", 2 * np.pi)), Boundary(b))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridFunction:
    domain: DomainSpec
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        n = values.shape[0] if values.ndim else 0
        check_resolution(n)
        if values.shape != self.domain.shape(n):
            raise ValueError(
                f"values of shape {values.shape} do not match a {self.domain.dims}D grid"
            )
        if not self.domain.periodic and values[-1] != 0.0:
            raise ValueError("Dirichlet grid function must vanish on the boundary node")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_callable(cls, domain: DomainSpec, n: int, f) -> "GridFunction":
        values = np.asarray(f(*domain.mesh(n)), dtype=np.float64)
        values = np.broadcast_to(values, domain.shape(n)).copy()
        mask = domain.boundary_mask(n)
        if mask is not None:
            values = values * mask
        return cls(domain, values)

    @classmethod
    def zeros(cls, domain: DomainSpec, n: int) -> "GridFunction":
        return cls(domain, np.zeros(domain.shape(n)))

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.domain, values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return self.with_values(-self.values)


def _check_compatible(a: GridFunction, b: GridFunction) -> None:
    if a.domain != b.domain or a.values.shape != b.values.shape:
        raise ValueError(
            f"incompatible grid functions: {a.domain}@{a.values.shape} vs {b.domain}@{b.values.shape}"
        )


def inner_array(domain: DomainSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched Riemann-sum inner product over the trailing grid axes."""
    n = a.shape[-1]
    axes = tuple(range(-domain.dims, 0))
    return domain.cell_volume(n) * np.sum(a * b, axis=axes)


def l2_inner(a: GridFunction, b: GridFunction) -> float:
    _check_compatible(a, b)
    return float(inner_array(a.domain, a.values, b.values))


def l2_norm(a: GridFunction) -> float:
    return float(np.sqrt(l2_inner(a, a)))


def resample(u: GridFunction, new_resolution: int) -> GridFunction:
    """Spectral interpolation (zero-pad) or truncation onto another power-of-two grid."""
    from .spectral import resample_array

    check_resolution(new_resolution)
    return GridFunction(u.domain, resample_array(u.domain, u.values, new_resolution))


@dataclass
class Dataset:
    domain: DomainSpec
    resolution: int
    samples: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        check_resolution(self.resolution)
        shape = self.domain.shape(self.resolution)
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.size == 0:
            samples = samples.reshape((0,) + shape)
        if samples.shape[1:] != shape:
            raise ValueError(f"samples of shape {samples.shape} do not match grid {shape}")
        self.samples = samples

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> GridFunction:
        return GridFunction(self.domain, self.samples[i])

    def __iter__(self) -> Iterator[GridFunction]:
        for i in range(self.count):
            yield self[i]

    @classmethod
    def from_functions(cls, funcs: list[GridFunction], metadata: dict | None = None) -> "Dataset":
        if not funcs:
            raise ValueError("cannot infer domain from an empty list; construct Dataset directly")
        first = funcs[0]
        for f in funcs[1:]:
            _check_compatible(first, f)
        return cls(first.domain, first.resolution, np.stack([f.values for f in funcs]), dict(metadata or {}))

    def resampled(self, new_resolution: int) -> "Dataset":
        from .spectral import resample_array

        if new_resolution == self.resolution:
            return Dataset(self.domain, self.resolution, self.samples.copy(), dict(self.metadata))
        values = resample_array(self.domain, self.samples, new_resolution)
        return Dataset(self.domain, new_resolution, values, dict(self.metadata))


def save_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, d.domain.dims, int(d.domain.boundary), float(d.domain.extent),
        d.resolution, d.count,
    )
    payload = np.ascontiguousarray(d.samples, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    if d.metadata:
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(d.metadata, indent=2, sort_keys=True, default=str))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, dims, boundary, extent, resolution, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    try:
        domain = DomainSpec(int(dims), float(extent), Boundary(boundary))
        check_resolution(resolution)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: invalid header: {exc}") from exc
    n_values = count * resolution**dims
    body = raw[_HEADER.size:]
    if len(body) != 8 * n_values:
        raise DatasetFormatError(
            f"{path}: payload has {len(body)} bytes, header implies {8 * n_values} "
            f"(count={count}, resolution={resolution})"
        )
    samples = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape((count,) + domain.shape(resolution))
    meta_path = path.with_name(path.name + ".meta.json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Dataset(domain, resolution, samples, metadata)
