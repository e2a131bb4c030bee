"""Trapezoidal quadrature over Q, the lateral boundary, time slices and face subsets.

Weights are tensor products of 1D composite trapezoid weights, exact for
affine integrands.  Reductions contract one axis at a time in a fixed order,
so results are bit-reproducible.
"""
from __future__ import annotations

import numpy as np

from .fields import FieldSample
from .grid import Face, SpaceTimeGrid


def trapezoid_weights(m: int, h: float) -> np.ndarray:
    w = np.full(m, h)
    w[0] = w[-1] = 0.5 * h
    return w


def weighted_sum(values: np.ndarray, weights: list) -> np.ndarray:
    """Contract the leading len(weights) axes against 1D weights, in order."""
    out = values
    for w in weights:
        out = np.tensordot(w, out, axes=(0, 0))
    return out


def grid_weights(grid: SpaceTimeGrid) -> list:
    return [trapezoid_weights(grid.nt, grid.dt)] + [trapezoid_weights(m, d) for m, d in zip(grid.nx, grid.dx)]


def integrate_Q(values: np.ndarray, grid: SpaceTimeGrid):
    return weighted_sum(values, grid_weights(grid))


def integrate_Omega(values: np.ndarray, grid: SpaceTimeGrid):
    """Integral over the box of a (*nx, ...) array."""
    return weighted_sum(values, grid_weights(grid)[1:])


def face_weights(grid: SpaceTimeGrid, face: Face) -> list:
    w = grid_weights(grid)
    return [w[0]] + [w[k + 1] for k in range(grid.n) if k != face.axis]


def integrate_face(values: np.ndarray, grid: SpaceTimeGrid, face: Face):
    """Integral over (t0,T) x face of a (nt, *face_shape, ...) array."""
    return weighted_sum(values, face_weights(grid, face))


def split_faces(grid: SpaceTimeGrid, omega0, margin: float = 0.1) -> tuple:
    """(G, Sigma minus G): G holds the faces with nu . omega0 < margin."""
    G = [f for f in grid.faces() if f.dot(omega0) < margin]
    rest = [f for f in grid.faces() if f.dot(omega0) >= margin]
    return G, rest


def integrate_faces(traces: dict, grid: SpaceTimeGrid, faces=None):
    """Sum of face integrals of a {Face: array} trace dictionary."""
    faces = list(traces) if faces is None else faces
    if not faces:
        raise ValueError("empty boundary region")
    total = 0.0
    for f in faces:
        total = total + integrate_face(traces[f], grid, f)
    return total


def quadrature(u, region: str = "Q", grid: SpaceTimeGrid | None = None, *, time_index: int = -1,
               omega0=None, margin: float = 0.1):
    """Integrate a scalar field over Q, Sigma, an Omega time slice, G or Sigma minus G.

    region is one of "Q", "Sigma", "Omega", "G", "Sigma\\G".
    """
    if isinstance(u, FieldSample):
        grid, vals = u.grid, u.values
        if u.rank != "scalar":
            raise ValueError("quadrature expects a scalar field")
    else:
        vals = np.asarray(u)
        if grid is None:
            raise ValueError("a grid is required for raw arrays")
    if region == "Q":
        return integrate_Q(vals, grid)
    if region == "Omega":
        return integrate_Omega(vals[time_index], grid)
    if region == "Sigma":
        faces = grid.faces()
    elif region in ("G", "Sigma\\G"):
        if omega0 is None:
            raise ValueError("omega0 is required to split the lateral boundary")
        G, rest = split_faces(grid, omega0, margin)
        faces = G if region == "G" else rest
    else:
        raise ValueError(f"unknown region {region!r}")
    if not faces:
        raise ValueError("empty boundary region")
    return integrate_faces({f: vals[grid.face_index(f)] for f in faces}, grid, faces)
