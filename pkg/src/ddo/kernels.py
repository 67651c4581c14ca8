"""Backend selection for the hot loops of the Fourier layers.

The compiled extension is used when it imports; set ``DDO_PURE_PYTHON=1`` to force the
numpy fallback.
"""

import importlib
import os

_NAMES = ("spectral_mix", "spectral_mix_grad_input", "spectral_mix_grad_weight", "gelu", "gelu_grad")


def load_backend(name: str):
    if name == "cython":
        return importlib.import_module("ddo._ckernels")
    if name == "python":
        return importlib.import_module("ddo._kernels_py")
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    out = ["python"]
    try:
        load_backend("cython")
        out.insert(0, "cython")
    except ImportError:
        pass
    return out


if os.environ.get("DDO_PURE_PYTHON", "") not in ("", "0"):
    _mod = load_backend("python")
else:
    try:
        _mod = load_backend("cython")
    except ImportError:
        _mod = load_backend("python")

BACKEND = "cython" if _mod.__name__.endswith("_ckernels") else "python"

spectral_mix = _mod.spectral_mix
spectral_mix_grad_input = _mod.spectral_mix_grad_input
spectral_mix_grad_weight = _mod.spectral_mix_grad_weight
gelu = _mod.gelu
gelu_grad = _mod.gelu_grad
