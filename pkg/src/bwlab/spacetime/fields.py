"""Immutable grid functions on Q."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import SpaceTimeGrid

SCALAR, VECTOR = "scalar", "vector"


@dataclass(frozen=True, eq=False)
class FieldSample:
    """Scalar or space-time-vector field sampled on the nodes of a grid.

    Vector fields carry the 1+n components on a leading axis.  Nodes where
    a stencil could not be applied are stored as NaN and reported by ``valid``.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    rank: str = SCALAR
    real_in_space: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, copy=True)
        if not np.iscomplexobj(vals):
            vals = vals.astype(float)
        if self.rank not in (SCALAR, VECTOR):
            raise ValueError(f"unknown rank {self.rank!r}")
        expect = self.grid.shape if self.rank == SCALAR else (self.grid.n + 1,) + self.grid.shape
        if vals.shape != expect:
            raise ValueError(f"array shape {vals.shape} does not match grid {expect}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "real_in_space", bool(self.real_in_space or not np.iscomplexobj(vals)))

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn: Callable, **kw) -> "FieldSample":
        """Sample fn(t, x1, ..., xn) on broadcastable coordinate arrays."""
        vals = np.broadcast_to(fn(*grid.mesh()), grid.shape)
        return cls(grid, vals, **kw)

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, rank: str = SCALAR, dtype=float) -> "FieldSample":
        shp = grid.shape if rank == SCALAR else (grid.n + 1,) + grid.shape
        return cls(grid, np.zeros(shp, dtype=dtype), rank)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def valid(self) -> np.ndarray:
        v = np.isfinite(self.values)
        return v if self.rank == SCALAR else v.all(axis=0)

    def component(self, k: int) -> "FieldSample":
        if self.rank != VECTOR:
            raise ValueError("component() needs a vector field")
        return FieldSample(self.grid, self.values[k])

    def with_values(self, values, **kw) -> "FieldSample":
        return FieldSample(self.grid, values, kw.pop("rank", self.rank), **kw)

    def conj(self) -> "FieldSample":
        return self.with_values(np.conj(self.values), real_in_space=self.real_in_space)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _vals(x):
    return x.values if isinstance(x, FieldSample) else x


def vector_field(grid: SpaceTimeGrid, components) -> FieldSample:
    """Stack 1+n scalar arrays or FieldSamples into a space-time vector field."""
    comps = [np.broadcast_to(_vals(c), grid.shape) for c in components]
    if len(comps) != grid.n + 1:
        raise ValueError("a space-time vector field needs 1+n components")
    return FieldSample(grid, np.stack(comps), VECTOR)
