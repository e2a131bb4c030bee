"""Centered finite differences on (nt, *nx[, batch...]) arrays.

Every operator returns an array of the input shape; nodes without a full
stencil are NaN so that compositions track their own region of validity.
Axis 0 is time, axes 1..n are space; trailing axes are carried along.
"""
from __future__ import annotations

import numpy as np


def _sl(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _empty(u: np.ndarray) -> np.ndarray:
    dtype = np.result_type(u.dtype, np.float64)
    return np.full(u.shape, np.nan, dtype=dtype)


def d1(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(u[k+1] - u[k-1]) / 2h along axis."""
    out = _empty(u)
    nd = u.ndim
    out[_sl(nd, axis, slice(1, -1))] = (u[_sl(nd, axis, slice(2, None))] - u[_sl(nd, axis, slice(0, -2))]) / (2 * h)
    return out


def d2(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """(u[k+1] - 2u[k] + u[k-1]) / h^2 along axis."""
    out = _empty(u)
    nd = u.ndim
    out[_sl(nd, axis, slice(1, -1))] = (u[_sl(nd, axis, slice(2, None))] - 2 * u[_sl(nd, axis, slice(1, -1))]
                                        + u[_sl(nd, axis, slice(0, -2))]) / h**2
    return out


def laplacian(u: np.ndarray, dx) -> np.ndarray:
    """Spatial Laplacian; spatial axes are 1..len(dx)."""
    out = d2(u, 1, dx[0])
    for i in range(1, len(dx)):
        out = out + d2(u, i + 1, dx[i])
    return out


def dalembertian(u: np.ndarray, dt: float, dx) -> np.ndarray:
    """Box u = u_tt - Lap u."""
    return d2(u, 0, dt) - laplacian(u, dx)


def gradient(u: np.ndarray, dx) -> list:
    return [d1(u, i + 1, dx[i]) for i in range(len(dx))]


def transport(u: np.ndarray, omega, dt: float, dx) -> np.ndarray:
    """T u = u_t - omega . grad u."""
    out = d1(u, 0, dt)
    for i, w in enumerate(omega):
        if w != 0.0:
            out = out - w * d1(u, i + 1, dx[i])
    return out


def crop(u: np.ndarray, k: int, nspace: int) -> np.ndarray:
    """Drop k nodes from both ends of axes 0..nspace."""
    idx = tuple(slice(k, -k if k else None) for _ in range(nspace + 1))
    return u[idx]
