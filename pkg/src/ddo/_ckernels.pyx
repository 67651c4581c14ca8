# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the Fourier layers (see ``_kernels_py`` for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erf, exp, sqrt, M_PI

cnp.import_array()


def spectral_mix(double complex[:, :, ::1] x, double complex[:, :, ::1] w):
    """out[b, o, k] = sum_i x[b, i, k] * w[i, o, k]"""
    cdef Py_ssize_t B = x.shape[0], I = x.shape[1], K = x.shape[2], O = w.shape[1]
    if w.shape[0] != I or w.shape[2] != K:
        raise ValueError("weight shape does not match input")
    out = np.zeros((B, O, K), dtype=np.complex128)
    cdef double complex[:, :, ::1] o_ = out
    cdef Py_ssize_t b, i, o, k
    cdef double complex xv
    with nogil:
        for b in range(B):
            for i in range(I):
                for o in range(O):
                    for k in range(K):
                        o_[b, o, k] = o_[b, o, k] + x[b, i, k] * w[i, o, k]
    return out


def spectral_mix_grad_input(double complex[:, :, ::1] g, double complex[:, :, ::1] w):
    """gx[b, i, k] = sum_o g[b, o, k] * conj(w[i, o, k])"""
    cdef Py_ssize_t B = g.shape[0], O = g.shape[1], K = g.shape[2], I = w.shape[0]
    if w.shape[1] != O or w.shape[2] != K:
        raise ValueError("weight shape does not match gradient")
    out = np.zeros((B, I, K), dtype=np.complex128)
    cdef double complex[:, :, ::1] o_ = out
    cdef Py_ssize_t b, i, o, k
    with nogil:
        for b in range(B):
            for i in range(I):
                for o in range(O):
                    for k in range(K):
                        o_[b, i, k] = o_[b, i, k] + g[b, o, k] * w[i, o, k].conjugate()
    return out


def spectral_mix_grad_weight(double complex[:, :, ::1] x, double complex[:, :, ::1] g):
    """gw[i, o, k] = sum_b conj(x[b, i, k]) * g[b, o, k]"""
    cdef Py_ssize_t B = x.shape[0], I = x.shape[1], K = x.shape[2], O = g.shape[1]
    if g.shape[0] != B or g.shape[2] != K:
        raise ValueError("gradient shape does not match input")
    out = np.zeros((I, O, K), dtype=np.complex128)
    cdef double complex[:, :, ::1] o_ = out
    cdef Py_ssize_t b, i, o, k
    with nogil:
        for b in range(B):
            for i in range(I):
                for o in range(O):
                    for k in range(K):
                        o_[i, o, k] = o_[i, o, k] + x[b, i, k].conjugate() * g[b, o, k]
    return out


def gelu(x):
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty_like(xf)
    cdef double[::1] xv = xf
    cdef double[::1] ov = out
    cdef Py_ssize_t j, n = xf.shape[0]
    cdef double s = 1.0 / sqrt(2.0)
    with nogil:
        for j in range(n):
            ov[j] = 0.5 * xv[j] * (1.0 + erf(xv[j] * s))
    return out.reshape(np.shape(x))


def gelu_grad(x, gy):
    """Chain rule through GELU: gy * (Phi(x) + x phi(x))."""
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] gf = np.ascontiguousarray(gy, dtype=np.float64).ravel()
    if xf.shape[0] != gf.shape[0]:
        raise ValueError("shape mismatch")
    out = np.empty_like(xf)
    cdef double[::1] xv = xf
    cdef double[::1] gv = gf
    cdef double[::1] ov = out
    cdef Py_ssize_t j, n = xf.shape[0]
    cdef double s = 1.0 / sqrt(2.0)
    cdef double c = 1.0 / sqrt(2.0 * M_PI)
    cdef double xj
    with nogil:
        for j in range(n):
            xj = xv[j]
            ov[j] = gv[j] * (0.5 * (1.0 + erf(xj * s)) + xj * c * exp(-0.5 * xj * xj))
    return out.reshape(np.shape(x))
