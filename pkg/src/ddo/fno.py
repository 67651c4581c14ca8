"""Fourier neural operator with noise-level conditioning and hand-written gradients.

The network maps a function ``u`` and a scalar ``cond`` to a function:

    h_0 = lift([u, cond])
    h_{l+1} = act(K_l h_l + W_l h_l + b_l)        (no activation after the last block)
    out = proj(h_L)

``K_l`` multiplies the lowest Fourier modes of each channel by a learned complex
matrix; every other map is pointwise.  Spectral coefficients are normalized by the
number of grid points, so the same parameters act consistently at any resolution
with at least ``2 * modes`` points per dimension.

Parameters are real arrays (spectral weights are split into real and imaginary
parts) kept in a fixed order, which is also the order of the on-disk payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft as sfft

from . import kernels
from .grid import DomainSpec, GridFunction

MODEL_MAGIC = b"DDOM"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FnoConfig:
    modes: int = 16
    width: int = 32
    layers: int = 4
    dims: int = 1
    in_channels: int = 2
    out_channels: int = 1
    activation: str = "gelu"
    output_scaling: str = "none"

    def __post_init__(self):
        if self.modes < 1 or self.width < 1 or self.layers < 1:
            raise ValueError("modes, width and layers must be >= 1")
        if self.dims not in (1, 2):
            raise ValueError("dims must be 1 or 2")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.activation not in ("gelu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_scaling not in ("none", "inv_sigma"):
            raise ValueError(f"unknown output scaling {self.output_scaling!r}")

    @property
    def mode_shape(self) -> tuple[int, ...]:
        if self.dims == 1:
            return (self.modes,)
        return (2 * self.modes - 1, self.modes)

    @property
    def min_resolution(self) -> int:
        return 2 * self.modes

    @classmethod
    def from_dict(cls, d: dict) -> "FnoConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown FnoConfig fields: {sorted(unknown)}")
        return cls(**d)


def param_shapes(cfg: FnoConfig) -> dict[str, tuple[int, ...]]:
    W = cfg.width
    shapes = {"lift.w": (cfg.in_channels, W), "lift.b": (W,)}
    for l in range(cfg.layers):
        shapes[f"layer{l}.spec_re"] = (W, W) + cfg.mode_shape
        shapes[f"layer{l}.spec_im"] = (W, W) + cfg.mode_shape
        shapes[f"layer{l}.w"] = (W, W)
        shapes[f"layer{l}.b"] = (W,)
    shapes["proj.w"] = (W, cfg.out_channels)
    shapes["proj.b"] = (cfg.out_channels,)
    return shapes


def param_count(cfg: FnoConfig) -> int:
    W, K = cfg.width, int(np.prod(cfg.mode_shape))
    per_layer = 2 * W * W * K + W * W + W
    return cfg.in_channels * W + W + cfg.layers * per_layer + W * cfg.out_channels + cfg.out_channels


@dataclass
class FnoModel:
    cfg: FnoConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        shapes = param_shapes(self.cfg)
        if list(self.params) != list(shapes):
            raise ValueError("parameter names/order do not match the config")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    @property
    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "FnoModel":
        return FnoModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def __call__(self, u: GridFunction, cond: float) -> GridFunction:
        return forward(self, u, cond)


@dataclass
class GradientTape:
    loss: float
    grads: dict[str, np.ndarray]


def init(cfg: FnoConfig, rng, zero_scale: bool = False, zero_bias: bool = False) -> FnoModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) affine maps, spectral weights scaled by 1/width^2.

    Debug flags: ``zero_scale`` zeroes every weight (the output is then the projection
    bias), ``zero_bias`` zeroes every bias (with ``activation="linear"`` the map is then
    linear in its inputs).
    """
    params = {}
    for name, shape in param_shapes(cfg).items():
        if ".spec_" in name:
            arr = rng.random(shape) / cfg.width**2
        else:
            fan_in = cfg.in_channels if name.startswith("lift") else cfg.width
            bound = 1.0 / np.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, shape)
        if (zero_scale and not name.endswith(".b")) or (zero_bias and name.endswith(".b")):
            arr = np.zeros(shape)
        params[name] = arr
    return FnoModel(cfg, params)


def zeros(cfg: FnoConfig) -> FnoModel:
    return FnoModel(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})


# -- forward / backward ------------------------------------------------------

def _grid_axes(dims: int) -> tuple[int, ...]:
    return tuple(range(2, 2 + dims))


def _gather(Xh: np.ndarray, cfg: FnoConfig) -> np.ndarray:
    m = cfg.modes
    if cfg.dims == 1:
        block = Xh[:, :, :m]
    else:
        block = np.concatenate([Xh[:, :, :m, :m], Xh[:, :, Xh.shape[2] - m + 1:, :m]], axis=2)
    return np.ascontiguousarray(block).reshape(Xh.shape[0], Xh.shape[1], -1)


def _scatter(Ym: np.ndarray, cfg: FnoConfig, rshape: tuple[int, ...]) -> np.ndarray:
    m = cfg.modes
    B, C = Ym.shape[:2]
    out = np.zeros((B, C) + rshape, dtype=np.complex128)
    Ym = Ym.reshape((B, C) + cfg.mode_shape)
    if cfg.dims == 1:
        out[:, :, :m] = Ym
    else:
        n = rshape[0]
        out[:, :, :m, :m] = Ym[:, :, :m]
        out[:, :, n - m + 1:, :m] = Ym[:, :, m:]
    return out


def _last_axis_weight(cfg: FnoConfig) -> np.ndarray:
    """irfft counts every retained mode twice except the zero mode of the last axis."""
    w = np.full(cfg.mode_shape, 2.0)
    w[..., 0] = 1.0
    return w.reshape(-1)


def _spectral_weights(params, l: int, cfg: FnoConfig) -> np.ndarray:
    W = cfg.width
    re = params[f"layer{l}.spec_re"].reshape(W, W, -1)
    im = params[f"layer{l}.spec_im"].reshape(W, W, -1)
    return np.ascontiguousarray(re + 1j * im)


def _check_resolution(cfg: FnoConfig, grid: tuple[int, ...]):
    if len(grid) != cfg.dims:
        raise ValueError(f"model is {cfg.dims}D, input grid is {grid}")
    if min(grid) < cfg.min_resolution:
        raise ValueError(f"resolution {min(grid)} is below 2*modes = {cfg.min_resolution}")


def _inputs(x: np.ndarray, cond: np.ndarray, cfg: FnoConfig) -> np.ndarray:
    B = x.shape[0]
    npts = int(np.prod(x.shape[1:]))
    chans = [x.reshape(B, 1, npts)]
    cond = np.broadcast_to(np.asarray(cond, dtype=np.float64), (B,))
    for _ in range(cfg.in_channels - 1):
        chans.append(np.broadcast_to(cond[:, None, None], (B, 1, npts)))
    return np.concatenate(chans, axis=1)


def _output_scale(cfg: FnoConfig, cond: np.ndarray) -> np.ndarray | None:
    # "inv_sigma" reads the conditioning channel as log sigma and divides the output by sigma
    if cfg.output_scaling == "none":
        return None
    if cfg.in_channels < 2:
        raise ValueError("output scaling needs a conditioning channel")
    return np.exp(-cond)


def apply(model: FnoModel, x: np.ndarray, cond, mask: np.ndarray | None = None, keep: bool = False):
    """Batched forward pass on raw grid values ``x`` of shape ``(B,) + grid``.

    ``mask`` multiplies the output (used to pin Dirichlet boundary nodes).  With
    ``keep=True`` returns ``(out, cache)`` for :func:`backward`.
    """
    cfg, p = model.cfg, model.params
    grid = x.shape[1:]
    _check_resolution(cfg, grid)
    B, npts = x.shape[0], int(np.prod(grid))
    axes = _grid_axes(cfg.dims)
    inp = _inputs(x, cond, cfg)
    h = np.matmul(p["lift.w"].T, inp) + p["lift.b"][None, :, None]
    cache = {"inp": inp, "layers": [], "grid": grid}
    for l in range(cfg.layers):
        Xh = sfft.rfftn(h.reshape((B, cfg.width) + grid), axes=axes, norm="forward")
        Xm = _gather(Xh, cfg)
        Ym = kernels.spectral_mix(Xm, _spectral_weights(p, l, cfg))
        y = sfft.irfftn(_scatter(Ym, cfg, Xh.shape[2:]), s=grid, axes=axes, norm="forward")
        z = y.reshape(B, cfg.width, npts) + np.matmul(p[f"layer{l}.w"].T, h) + p[f"layer{l}.b"][None, :, None]
        act = cfg.activation == "gelu" and l < cfg.layers - 1
        if keep:
            cache["layers"].append((h, Xm, z, act))
        h = kernels.gelu(z) if act else z
    out = np.matmul(p["proj.w"].T, h) + p["proj.b"][None, :, None]
    if keep:
        cache["h_last"] = h
    out = out.reshape((B, cfg.out_channels) + grid)
    if cfg.out_channels == 1:
        out = out[:, 0]
    scale = _output_scale(cfg, inp[:, -1, 0])
    if scale is not None:
        out = out * scale.reshape((B,) + (1,) * (out.ndim - 1))
    if mask is not None:
        out = out * mask
    if keep:
        cache["mask"] = mask
        cache["scale"] = scale
        return out, cache
    return out


def backward(model: FnoModel, cache: dict, gout: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum(gout * out)`` for the pass recorded in ``cache``."""
    cfg, p = model.cfg, model.params
    grid = cache["grid"]
    B, npts = gout.shape[0], int(np.prod(grid))
    axes = _grid_axes(cfg.dims)
    if cache["mask"] is not None:
        gout = gout * cache["mask"]
    if cache["scale"] is not None:
        gout = gout * cache["scale"].reshape((B,) + (1,) * (gout.ndim - 1))
    g = gout.reshape(B, cfg.out_channels, npts)
    grads = {}
    h = cache["h_last"]
    grads["proj.w"] = np.einsum("bcp,bop->co", h, g)
    grads["proj.b"] = g.sum(axis=(0, 2))
    gh = np.matmul(p["proj.w"], g)
    wk = _last_axis_weight(cfg)
    for l in reversed(range(cfg.layers)):
        h_in, Xm, z, act = cache["layers"][l]
        gz = kernels.gelu_grad(z, gh) if act else gh
        grads[f"layer{l}.b"] = gz.sum(axis=(0, 2))
        grads[f"layer{l}.w"] = np.einsum("bip,bop->io", h_in, gz)
        gh_in = np.matmul(p[f"layer{l}.w"], gz)
        Gz = sfft.rfftn(gz.reshape((B, cfg.width) + grid), axes=axes, norm="backward")
        GYm = _gather(Gz, cfg) * wk
        GW = kernels.spectral_mix_grad_weight(Xm, GYm).reshape((cfg.width, cfg.width) + cfg.mode_shape)
        grads[f"layer{l}.spec_re"] = GW.real.copy()
        grads[f"layer{l}.spec_im"] = GW.imag.copy()
        GXm = kernels.spectral_mix_grad_input(GYm, _spectral_weights(p, l, cfg)) / wk
        gx = sfft.irfftn(_scatter(GXm, cfg, Gz.shape[2:]), s=grid, axes=axes, norm="forward") / npts
        gh = gh_in + gx.reshape(B, cfg.width, npts)
    inp = cache["inp"]
    grads["lift.w"] = np.einsum("bip,bop->io", inp, gh)
    grads["lift.b"] = gh.sum(axis=(0, 2))
    return {name: grads[name] for name in p}


def forward(m: FnoModel, u: GridFunction, cond: float) -> GridFunction:
    out = apply(m, u.values[None], np.array([cond]), u.domain.boundary_mask(u.resolution))
    return GridFunction(u.domain, out[0])


def loss_and_grad(m: FnoModel, inputs: np.ndarray, cond, loss_fn: Callable, mask: np.ndarray | None = None) -> GradientTape:
    """Evaluate ``loss_fn(outputs) -> (value, d value / d outputs)`` and backpropagate."""
    out, cache = apply(m, inputs, cond, mask, keep=True)
    value, gout = loss_fn(out)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    return GradientTape(float(value), backward(m, cache, gout))


# -- persistence -------------------------------------------------------------

def save_model(m: FnoModel, path: str | Path) -> None:
    header = json.dumps(asdict(m.cfg), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(m.flat(), dtype="<f8").tobytes())


def load_model(path: str | Path) -> FnoModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise ModelFormatError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    try:
        cfg = FnoConfig.from_dict(json.loads(raw[12:12 + hlen]))
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"{path}: bad config header: {exc}") from exc
    body = raw[12 + hlen:]
    expected = param_count(cfg)
    if len(body) != 8 * expected:
        raise ModelFormatError(f"{path}: payload has {len(body) // 8} values, config implies {expected}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    params, offset = {}, 0
    for name, shape in param_shapes(cfg).items():
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return FnoModel(cfg, params)


def model_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
