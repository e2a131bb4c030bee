"""Exponentially conjugated difference operators  e^{-Psi} P e^{Psi}.

Two realisations are provided.

``ExpansionOps`` conjugates the continuum operator analytically
(d -> d + grad Psi) and applies centered differences only to the smooth
amplitude.  ``StencilOps`` conjugates the difference operator itself: each
stencil weight is multiplied by exp(Psi(neighbour) - Psi(node)), which is
the exact discrete conjugation of the unconjugated scheme.

Phases have the form

    Psi(t, x) = sigma (t + omega.x) / h - i xi.(t, x) - sigma t^2 / (2 eps),

with the last term present only for the convexified weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spacetime import stencils as st
from .spacetime.grid import SpaceTimeGrid


@dataclass(frozen=True)
class Phase:
    omega: tuple
    h: float
    sign: int = 1
    xi: tuple | None = None
    eps: float | None = None

    @property
    def n(self) -> int:
        return len(self.omega)

    def _xi(self) -> np.ndarray:
        return np.zeros(self.n + 1) if self.xi is None else np.asarray(self.xi, dtype=float)

    def real_part(self, t, *x):
        """sigma * phi_w / h, the growth exponent."""
        phi = t + sum(w * xi for w, xi in zip(self.omega, x))
        out = self.sign * phi / self.h
        if self.eps is not None:
            out = out - self.sign * t**2 / (2 * self.eps)
        return out

    def value(self, t, *x):
        xi = self._xi()
        lin = xi[0] * t + sum(k * xx for k, xx in zip(xi[1:], x))
        return self.real_part(t, *x) - 1j * lin

    def grad_t(self, t):
        g = self.sign / self.h - 1j * self._xi()[0]
        if self.eps is not None:
            g = g - self.sign * t / self.eps
        return g

    def grad_x(self) -> np.ndarray:
        return self.sign * np.asarray(self.omega) / self.h - 1j * self._xi()[1:]

    def box(self) -> float:
        """Box Psi (constant)."""
        return -self.sign / self.eps if self.eps is not None else 0.0

    def zero_order(self, t):
        """Psi_t^2 - grad Psi . grad Psi + Box Psi."""
        gx = self.grad_x()
        return self.grad_t(t) ** 2 - np.sum(gx * gx) + self.box()

    @property
    def is_real(self) -> bool:
        return self.xi is None or not np.any(self.xi)


class _Ops:
    def __init__(self, grid: SpaceTimeGrid, phase: Phase):
        self.grid = grid
        self.phase = phase
        self.tcol = grid.t.reshape((-1,) + (1,) * grid.n)

    def biwave(self, M: np.ndarray, A=0.0, B=0.0, C=None, q=0.0) -> np.ndarray:
        """Conjugated Box^2 + A Box + B d_t + C.grad + q."""
        bM = self.box(M)
        out = self.box(bM) + A * bM + B * self.dt(M) + q * M
        if C is not None:
            for i in range(self.grid.n):
                out = out + C[i] * self.dx(M, i)
        return out

    def transport(self, M: np.ndarray) -> np.ndarray:
        out = self.dt(M)
        for i, w in enumerate(self.phase.omega):
            if w != 0.0:
                out = out - w * self.dx(M, i)
        return out


class ExpansionOps(_Ops):
    """Analytic conjugation; differences act on the amplitude only."""

    def dt(self, M):
        return st.d1(M, 0, self.grid.dt) + self.phase.grad_t(self.tcol) * M

    def dx(self, M, i):
        return st.d1(M, i + 1, self.grid.dx[i]) + self.phase.grad_x()[i] * M

    def box(self, M):
        g = self.grid
        gt = self.phase.grad_t(self.tcol)
        gx = self.phase.grad_x()
        out = st.dalembertian(M, g.dt, g.dx) + 2 * gt * st.d1(M, 0, g.dt)
        for i in range(g.n):
            out = out - 2 * gx[i] * st.d1(M, i + 1, g.dx[i])
        return out + self.phase.zero_order(self.tcol) * M


class StencilOps(_Ops):
    """Discrete conjugation: exp(Psi(y+d) - Psi(y)) folded into the stencil weights."""

    def __init__(self, grid, phase):
        super().__init__(grid, phase)
        dt = grid.dt
        gt = np.broadcast_to(phase.grad_t(self.tcol), self.tcol.shape)
        curv = -phase.sign / phase.eps if phase.eps is not None else 0.0
        self.et_plus = np.exp(gt * dt + 0.5 * curv * dt**2)
        self.et_minus = np.exp(-gt * dt + 0.5 * curv * dt**2)
        gx = phase.grad_x()
        self.ex_plus = [np.exp(gx[i] * grid.dx[i]) for i in range(grid.n)]
        self.ex_minus = [np.exp(-gx[i] * grid.dx[i]) for i in range(grid.n)]

    def _shifted(self, M, axis):
        nd = M.ndim
        hi = [slice(None)] * nd
        lo = [slice(None)] * nd
        mid = [slice(None)] * nd
        hi[axis], lo[axis], mid[axis] = slice(2, None), slice(0, -2), slice(1, -1)
        return M[tuple(hi)], M[tuple(mid)], M[tuple(lo)], tuple(mid)

    def _factors(self, axis):
        if axis == 0:
            return self.et_plus[1:-1], self.et_minus[1:-1]
        return self.ex_plus[axis - 1], self.ex_minus[axis - 1]

    def _d1(self, M, axis, h):
        out = np.full(M.shape, np.nan, dtype=complex)
        p, _, m, mid = self._shifted(M, axis)
        ep, em = self._factors(axis)
        out[mid] = (ep * p - em * m) / (2 * h)
        return out

    def _d2(self, M, axis, h):
        out = np.full(M.shape, np.nan, dtype=complex)
        p, c, m, mid = self._shifted(M, axis)
        ep, em = self._factors(axis)
        out[mid] = (ep * p - 2 * c + em * m) / h**2
        return out

    def dt(self, M):
        return self._d1(M, 0, self.grid.dt)

    def dx(self, M, i):
        return self._d1(M, i + 1, self.grid.dx[i])

    def box(self, M):
        g = self.grid
        out = self._d2(M, 0, g.dt)
        for i in range(g.n):
            out = out - self._d2(M, i + 1, g.dx[i])
        return out


def make_ops(grid: SpaceTimeGrid, phase: Phase, method: str = "stencil") -> _Ops:
    if method == "stencil":
        return StencilOps(grid, phase)
    if method == "expansion":
        return ExpansionOps(grid, phase)
    raise ValueError(f"unknown conjugation method {method!r}")
