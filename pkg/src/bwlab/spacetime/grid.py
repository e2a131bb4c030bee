"""Uniform space-time grids on Q = (t0, T) x box, unit directions and boundary faces."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INTERIOR, LATERAL, INITIAL, FINAL = 0, 1, 2, 3


@dataclass(frozen=True)
class Face:
    """One face of the box: x[axis] = lower (side=-1) or upper (side=+1)."""

    axis: int
    side: int

    def normal(self, n: int) -> np.ndarray:
        nu = np.zeros(n)
        nu[self.axis] = float(self.side)
        return nu

    def dot(self, omega) -> float:
        """nu . omega, computed exactly from the box normal."""
        return float(self.side) * float(np.asarray(omega)[self.axis])

    @property
    def label(self) -> str:
        return ("-" if self.side < 0 else "+") + f"x{self.axis + 1}"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Node grid with nt time levels on [t0, T] and nx[i] nodes on each box axis.

    Time is axis 0 of every field array, spatial axes follow (time-major layout).
    """

    T: float
    omega_box: tuple
    nt: int
    nx: tuple
    t0: float = 0.0
    _dx: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.omega_box)
        nx = tuple(int(k) for k in np.atleast_1d(self.nx))
        object.__setattr__(self, "omega_box", box)
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "t0", float(self.t0))
        if len(box) not in (1, 2, 3):
            raise ValueError("spatial dimension must be 1, 2 or 3")
        if len(nx) != len(box):
            raise ValueError("nx and omega_box disagree in dimension")
        if self.nt < 3 or min(nx) < 3:
            raise ValueError("every grid extent needs at least 3 nodes")
        if not self.T > self.t0 or any(b <= a for a, b in box):
            raise ValueError("empty time interval or box")
        dx = tuple((b - a) / (k - 1) for (a, b), k in zip(box, nx))
        object.__setattr__(self, "_dx", dx)

    @classmethod
    def uniform(cls, n: int, T: float = 1.0, L: float = 1.0, nx: int = 33,
                nt: int | None = None, cfl: float = 0.5) -> "SpaceTimeGrid":
        """Grid on (0,T)x(0,L)^n; nt chosen from the CFL target when not given."""
        dx = L / (nx - 1)
        if nt is None:
            dt_max = cfl / np.sqrt(n / dx**2)
            nt = int(np.ceil(T / dt_max)) + 1
        return cls(T, ((0.0, L),) * n, nt, (nx,) * n)

    @property
    def n(self) -> int:
        return len(self.nx)

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / (self.nt - 1)

    @property
    def dx(self) -> tuple:
        return self._dx

    @property
    def h(self) -> np.ndarray:
        """All spacings, time first."""
        return np.array((self.dt,) + self.dx)

    @property
    def shape(self) -> tuple:
        return (self.nt,) + self.nx

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def cfl(self) -> float:
        return self.dt * float(np.sqrt(sum(1.0 / d**2 for d in self.dx)))

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.nt)

    def x(self, i: int) -> np.ndarray:
        a, b = self.omega_box[i]
        return np.linspace(a, b, self.nx[i])

    def axes(self) -> list:
        """1D coordinate arrays, time first."""
        return [self.t] + [self.x(i) for i in range(self.n)]

    def mesh(self) -> list:
        """Broadcastable coordinate arrays [t, x1, ..., xn]."""
        out = []
        for k, ax in enumerate(self.axes()):
            shp = [1] * (self.n + 1)
            shp[k] = ax.size
            out.append(ax.reshape(shp))
        return out

    def points(self) -> np.ndarray:
        """All node coordinates, shape (*shape, 1+n)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def faces(self) -> list:
        return [Face(i, s) for i in range(self.n) for s in (-1, 1)]

    def face_index(self, face: Face) -> tuple:
        """Index tuple selecting the face nodes of a (nt, *nx) array."""
        idx = [slice(None)] * (self.n + 1)
        idx[face.axis + 1] = 0 if face.side < 0 else -1
        return tuple(idx)

    def classify(self) -> np.ndarray:
        """Node classes: INTERIOR, LATERAL, INITIAL or FINAL, each node exactly once.

        Initial and final time levels take precedence over the lateral boundary.
        """
        cls = np.full(self.shape, INTERIOR, dtype=np.int8)
        for f in self.faces():
            cls[self.face_index(f)] = LATERAL
        cls[0] = INITIAL
        cls[-1] = FINAL
        return cls

    def with_halo(self, kt: int, kx_lo, kx_hi=None) -> tuple:
        """Grid extended by kt time levels at both ends and kx_lo/kx_hi nodes per spatial side.

        Returns the extended grid and the index tuple recovering this grid.
        """
        lo = np.broadcast_to(np.atleast_1d(kx_lo), (self.n,)).astype(int)
        hi = lo if kx_hi is None else np.broadcast_to(np.atleast_1d(kx_hi), (self.n,)).astype(int)
        box = tuple((a - k * d, b + m * d) for (a, b), k, m, d in zip(self.omega_box, lo, hi, self.dx))
        ext = SpaceTimeGrid(self.T + kt * self.dt, box, self.nt + 2 * kt,
                            tuple(m + a + b for m, a, b in zip(self.nx, lo, hi)), t0=self.t0 - kt * self.dt)
        inner = (slice(kt, kt + self.nt),) + tuple(slice(k, k + m) for k, m in zip(lo, self.nx))
        return ext, inner

    def refined(self, factor: int) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.T, self.omega_box, (self.nt - 1) * factor + 1,
                             tuple((m - 1) * factor + 1 for m in self.nx), t0=self.t0)

    def describe(self) -> dict:
        return {"n": self.n, "T": self.T, "t0": self.t0, "omega_box": [list(b) for b in self.omega_box],
                "nt": self.nt, "nx": list(self.nx), "dt": self.dt, "dx": list(self.dx), "cfl": self.cfl}


@dataclass(frozen=True)
class Direction:
    """Unit vector omega and the neighbourhood radius epsilon used for N_eps(omega0)."""

    omega: tuple
    epsilon: float = 0.3

    def __post_init__(self):
        w = tuple(float(c) for c in np.atleast_1d(self.omega))
        object.__setattr__(self, "omega", w)
        if abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ValueError(f"direction must be a unit vector, |omega| = {np.linalg.norm(w)!r}")
        if not 0.0 < self.epsilon <= 2.0:
            raise ValueError("epsilon must lie in (0, 2]")

    @classmethod
    def from_vector(cls, v, epsilon: float = 0.3) -> "Direction":
        v = np.asarray(v, dtype=float)
        return cls(tuple(v / np.linalg.norm(v)), epsilon)

    @classmethod
    def from_angle(cls, theta: float, epsilon: float = 0.3) -> "Direction":
        return cls((np.cos(theta), np.sin(theta)), epsilon)

    @property
    def n(self) -> int:
        return len(self.omega)

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.omega)

    @property
    def null_vector(self) -> np.ndarray:
        """The light-like vector (1, -omega)."""
        return np.concatenate(([1.0], -self.vec))

    def neighbourhood(self, count: int, epsilon: float | None = None) -> list:
        """Directions in N_eps(omega) (arc radius eps), n=1 gives omega itself."""
        eps = self.epsilon if epsilon is None else epsilon
        if self.n == 1:
            return [self]
        if self.n == 2:
            th0 = np.arctan2(self.omega[1], self.omega[0])
            ths = th0 + np.linspace(-eps, eps, count) if count > 1 else [th0]
            return [Direction.from_angle(th, self.epsilon) for th in ths]
        rng = np.random.default_rng(0)
        out = [self]
        while len(out) < count:
            v = self.vec + eps * rng.uniform(-1, 1, self.n)
            d = Direction.from_vector(v, self.epsilon)
            if np.arccos(np.clip(d.vec @ self.vec, -1, 1)) < eps:
                out.append(d)
        return out


def full_circle(count: int) -> list:
    """Equally spaced directions on the unit circle (n=2)."""
    return [Direction.from_angle(th) for th in 2 * np.pi * np.arange(count) / count]


def null_projection(xi, omega) -> float:
    """xi . (1, -omega)."""
    xi = np.asarray(xi, dtype=float)
    return float(xi[0] - xi[1:] @ np.asarray(omega, dtype=float))
