"""Reference numpy implementations of the Fourier-layer inner loops.

Layouts: inputs ``(batch, channels, modes)``, weights ``(in, out, modes)``; the mode
axis is the flattened block of retained wavenumbers.
"""

import numpy as np
from scipy.special import erf

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def spectral_mix(x, w):
    # (K, B, I) @ (K, I, O) -> (K, B, O)
    return np.ascontiguousarray(np.matmul(x.transpose(2, 0, 1), w.transpose(2, 0, 1)).transpose(1, 2, 0))


def spectral_mix_grad_input(g, w):
    return np.ascontiguousarray(
        np.matmul(g.transpose(2, 0, 1), w.conj().transpose(2, 1, 0)).transpose(1, 2, 0)
    )


def spectral_mix_grad_weight(x, g):
    return np.ascontiguousarray(
        np.matmul(x.conj().transpose(2, 1, 0), g.transpose(2, 0, 1)).transpose(1, 2, 0)
    )


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def gelu_grad(x, gy):
    return gy * (0.5 * (1.0 + erf(x * _SQRT1_2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))
