"""Discrete differential operators on FieldSamples."""
from __future__ import annotations

import numpy as np

from . import stencils as st
from .fields import SCALAR, FieldSample
from .grid import Direction, SpaceTimeGrid


def _scalar(u: FieldSample):
    if u.rank != SCALAR:
        raise ValueError("operator expects a scalar field")


def apply_dalembertian(u: FieldSample, grid: SpaceTimeGrid | None = None) -> FieldSample:
    """Centered u_tt - Lap u; boundary nodes come back as NaN (undefined)."""
    _scalar(u)
    grid = u.grid if grid is None else grid
    if grid.shape != u.grid.shape:
        raise ValueError("field does not live on this grid")
    return u.with_values(st.dalembertian(u.values, grid.dt, grid.dx), real_in_space=u.real_in_space)


def directional_derivative_T(u: FieldSample, dir: Direction) -> FieldSample:
    """Centered T u = u_t - omega . grad u on interior nodes."""
    _scalar(u)
    if dir.n != u.grid.n:
        raise ValueError("direction and grid dimension differ")
    g = u.grid
    return u.with_values(st.transport(u.values, dir.omega, g.dt, g.dx), real_in_space=u.real_in_space)


def time_derivative(u: FieldSample) -> FieldSample:
    _scalar(u)
    return u.with_values(st.d1(u.values, 0, u.grid.dt))


def spatial_gradient(u: FieldSample) -> list:
    _scalar(u)
    return [u.with_values(v) for v in st.gradient(u.values, u.grid.dx)]


def divergence(field: FieldSample) -> FieldSample:
    """Space-time divergence of a vector field: d_t F0 + sum_i d_i F_i."""
    if field.rank != "vector":
        raise ValueError("divergence expects a vector field")
    g = field.grid
    out = st.d1(field.values[0], 0, g.dt)
    for i in range(g.n):
        out = out + st.d1(field.values[i + 1], i + 1, g.dx[i])
    return FieldSample(g, out)
