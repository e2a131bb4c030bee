"""Forward solver for the perturbed bi-wave IBVP.

The fourth-order problem

    Box^2 u + A Box u + B u_t + C . grad u + q u = 0   in Q,
    u = f, Box u = g on the lateral boundary, d_t^k u(0) = psi_k (k = 0..3),

is solved as the coupled pair Box u = w, Box w + A w + B u_t + C . grad u + q u = 0
with explicit leapfrog steps for both components.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spacetime import stencils as st
from .spacetime.grid import Face, SpaceTimeGrid
from .spacetime.quadrature import split_faces


class SolverError(RuntimeError):
    """Raised when a compute guard trips (CFL, compatibility, instability)."""


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """The quadruple (A, B, C, q) sampled on one grid; C has shape (n, nt, *nx)."""

    grid: SpaceTimeGrid
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    q: np.ndarray
    regularity: str = "smooth"

    def __post_init__(self):
        g = self.grid
        for name in ("A", "B", "q"):
            arr = np.array(np.broadcast_to(getattr(self, name), g.shape), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        C = np.asarray(self.C, dtype=float)
        if C.ndim == g.n + 2 and C.shape[0] != g.n:
            raise ValueError(f"C needs {g.n} components, got {C.shape[0]}")
        C = np.array(np.broadcast_to(C, (g.n,) + g.shape), dtype=float)
        C.flags.writeable = False
        object.__setattr__(self, "C", C)

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "CoefficientSet":
        return cls(grid, 0.0, 0.0, np.zeros((grid.n,) + grid.shape), 0.0)

    @classmethod
    def from_functions(cls, grid: SpaceTimeGrid, A=None, B=None, C=None, q=None, **kw) -> "CoefficientSet":
        """Sample callables f(t, x1, ..., xn); C is a sequence of n callables."""
        m = grid.mesh()

        def ev(fn):
            return 0.0 if fn is None else np.broadcast_to(fn(*m), grid.shape)

        Cv = np.zeros((grid.n,) + grid.shape) if C is None else np.stack([ev(c) for c in C])
        return cls(grid, ev(A), ev(B), Cv, ev(q), **kw)

    def __add__(self, other: "CoefficientSet") -> "CoefficientSet":
        return CoefficientSet(self.grid, self.A + other.A, self.B + other.B, self.C + other.C, self.q + other.q)

    def __sub__(self, other: "CoefficientSet") -> "CoefficientSet":
        return CoefficientSet(self.grid, self.A - other.A, self.B - other.B, self.C - other.C, self.q - other.q)

    def scaled(self, s: float) -> "CoefficientSet":
        return CoefficientSet(self.grid, s * self.A, s * self.B, s * self.C, s * self.q, self.regularity)

    def is_zero(self) -> bool:
        return not (self.A.any() or self.B.any() or self.C.any() or self.q.any())

    def boundary_flags(self, tol: float = 1e-12) -> dict:
        """Whether A, d_nu A, B and C vanish on the lateral boundary."""
        g = self.grid
        out = {"A": True, "dnu_A": True, "B": True, "C": True}
        for f in g.faces():
            idx = g.face_index(f)
            out["A"] &= bool(np.all(np.abs(self.A[idx]) <= tol))
            out["B"] &= bool(np.all(np.abs(self.B[idx]) <= tol))
            out["C"] &= bool(np.all(np.abs(self.C[(slice(None),) + idx]) <= tol))
            strip = _face_strip(self.A, g, f, 3)
            dn = (3 * strip[:, 0] - 4 * strip[:, 1] + strip[:, 2]) / (2 * g.dx[f.axis])
            out["dnu_A"] &= bool(np.all(np.abs(dn) <= max(tol, 1e-8)))
        return out

    def magnitude(self) -> dict:
        return {"A": float(np.abs(self.A).max()), "B": float(np.abs(self.B).max()),
                "C": float(np.abs(self.C).max()), "q": float(np.abs(self.q).max())}


def _face_strip(arr: np.ndarray, grid: SpaceTimeGrid, face: Face, width: int) -> np.ndarray:
    """Nodes at distance 0..width-1 from a face, shape (nt, width, *face_shape, ...)."""
    ax = face.axis + 1
    idx = np.arange(width) if face.side < 0 else grid.nx[face.axis] - 1 - np.arange(width)
    return np.moveaxis(np.take(arr, idx, axis=ax), ax, 1)


@dataclass
class IBVPData:
    """Input tuple F = (f, g, psi0..psi3).

    f and g are full-slice arrays (nt, *nx, *batch) or callables k -> (*nx, *batch);
    only their lateral-boundary nodes are read.  psi_k are (*nx, *batch) arrays.
    """

    f: object
    g: object
    psi: tuple

    def boundary(self, which: str, k: int) -> np.ndarray:
        src = self.f if which == "f" else self.g
        return np.asarray(src(k) if callable(src) else src[k])

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, batch: tuple = ()) -> "IBVPData":
        z = np.zeros(grid.nx + tuple(batch))
        zb = np.zeros(grid.shape + tuple(batch))
        return cls(zb, zb, (z, z, z, z))

    @classmethod
    def from_solution(cls, grid: SpaceTimeGrid, u: Callable, box_u: Callable, dt_u: list) -> "IBVPData":
        """Data of a known smooth u: u(t,x), Box u(t,x) and [u, u_t, u_tt, u_ttt] callables."""
        m = grid.mesh()
        f = np.broadcast_to(u(*m), grid.shape).astype(float)
        g = np.broadcast_to(box_u(*m), grid.shape).astype(float)
        t0 = [np.full((1,) * (grid.n + 1), grid.t0)] + m[1:]
        psi = tuple(np.broadcast_to(d(*t0), (1,) + grid.nx)[0].astype(float) for d in dt_u)
        return cls(f, g, psi)

    def scaled(self, s: float) -> "IBVPData":
        def sc(src):
            return (lambda k: s * np.asarray(src(k))) if callable(src) else s * np.asarray(src)
        return IBVPData(sc(self.f), sc(self.g), tuple(s * np.asarray(p) for p in self.psi))


@dataclass
class SystemState:
    """(u, w = Box u) at one time level."""

    u: np.ndarray
    w: np.ndarray
    k: int


class SystemOperator:
    """Discrete form of the coupled pair for a fixed coefficient set."""

    def __init__(self, coeffs: CoefficientSet):
        self.coeffs = coeffs
        self.grid = coeffs.grid

    def residual(self, u: np.ndarray, w: np.ndarray, F1=None, F2=None) -> tuple:
        """Node-wise (Box u - w - F1, Box w + A w + B u_t + C.grad u + q u - F2), NaN on the boundary."""
        g, c = self.grid, self.coeffs
        r1 = st.dalembertian(u, g.dt, g.dx) - w
        r2 = st.dalembertian(w, g.dt, g.dx) + c.A * w + c.B * st.d1(u, 0, g.dt) + c.q * u
        for i in range(g.n):
            r2 = r2 + c.C[i] * st.d1(u, i + 1, g.dx[i])
        if F1 is not None:
            r1 = r1 - F1
        if F2 is not None:
            r2 = r2 - F2
        return r1, r2

    def stability_number(self) -> float:
        """dt^2 max(|A|,|q|) + dt max(|B|,|C|); the documented safe range is <= 0.25."""
        m = self.coeffs.magnitude()
        dt = self.grid.dt
        return dt**2 * max(m["A"], m["q"]) + dt * max(m["B"], m["C"])


def reduce_to_system(coeffs: CoefficientSet) -> SystemOperator:
    return SystemOperator(coeffs)


class SolveHistory:
    """Solver output: full (u, w) histories or boundary strips plus final levels."""

    def __init__(self, grid, u=None, w=None, strips=None, final=None, events=None, batch_shape=()):
        self.grid = grid
        self.u = u
        self.w = w
        self._strips = strips or {}
        self._final = final or {}
        self.events = events or []
        self.batch_shape = batch_shape

    @property
    def full(self) -> bool:
        return self.u is not None

    def state(self, k: int) -> SystemState:
        if not self.full:
            raise ValueError("history was recorded in trace mode")
        return SystemState(self.u[k], self.w[k], k)

    def strip(self, name: str, face: Face) -> np.ndarray:
        if self.full:
            return _face_strip(self.u if name == "u" else self.w, self.grid, face, 3)
        return self._strips[(name, face)]

    def normal_derivative(self, name: str, face: Face) -> np.ndarray:
        """Outward d_nu with the 3-point one-sided stencil, shape (nt, *face_shape, *batch)."""
        s = self.strip(name, face)
        return (3 * s[:, 0] - 4 * s[:, 1] + s[:, 2]) / (2 * self.grid.dx[face.axis])

    def final_levels(self, name: str) -> np.ndarray:
        if self.full:
            return (self.u if name == "u" else self.w)[-4:]
        return self._final[name]

    def final_trace(self, name: str, order: int) -> np.ndarray:
        """d_t^order of u or w at t = T with one-sided differences (orders 0, 1, 2)."""
        v = self.final_levels(name)
        dt = self.grid.dt
        if order == 0:
            return v[-1]
        if order == 1:
            return (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dt)
        if order == 2:
            return (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / dt**2
        raise ValueError("final-time traces up to second order")


def _expand(arr: np.ndarray, nbatch: int) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * nbatch)


def _lap_int(u: np.ndarray, dx, n: int) -> np.ndarray:
    I = (slice(1, -1),) * n
    out = None
    for i in range(n):
        hi = list(I)
        lo = list(I)
        hi[i], lo[i] = slice(2, None), slice(0, -2)
        term = (u[tuple(hi)] - 2 * u[I] + u[tuple(lo)]) / dx[i] ** 2
        out = term if out is None else out + term
    return out


def _grad_int(u: np.ndarray, dx, n: int, i: int) -> np.ndarray:
    I = [slice(1, -1)] * n
    hi, lo = list(I), list(I)
    hi[i], lo[i] = slice(2, None), slice(0, -2)
    return (u[tuple(hi)] - u[tuple(lo)]) / (2 * dx[i])


def _d2_full(p: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second difference with 4-point one-sided stencils on the two end nodes."""
    p = np.moveaxis(np.asarray(p), axis, 0)
    out = np.empty_like(p, dtype=np.result_type(p, float))
    out[1:-1] = (p[2:] - 2 * p[1:-1] + p[:-2]) / h**2
    out[0] = (2 * p[0] - 5 * p[1] + 4 * p[2] - p[3]) / h**2
    out[-1] = (2 * p[-1] - 5 * p[-2] + 4 * p[-3] - p[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def check_compatibility(grid: SpaceTimeGrid, data: IBVPData, rtol: float = 5e-2) -> float:
    """Largest relative defect of the t=0 compatibility conditions on the boundary nodes."""
    n = grid.n
    psi0, psi1, psi2, psi3 = (np.asarray(p) for p in data.psi)
    f0, g0 = data.boundary("f", 0), data.boundary("g", 0)
    f1, g1 = data.boundary("f", 1), data.boundary("g", 1)
    f2, g2 = data.boundary("f", 2), data.boundary("g", 2)
    dt = grid.dt

    def lap_full(p):
        return sum(_d2_full(p, i, grid.dx[i]) for i in range(n))

    pairs = [(psi0, f0), (psi2 - lap_full(psi0), g0),
             (psi1, (-3 * f0 + 4 * f1 - f2) / (2 * dt)), (psi3 - lap_full(psi1), (-3 * g0 + 4 * g1 - g2) / (2 * dt))]
    worst = 0.0
    for a, b in pairs:
        a, b = np.asarray(a), np.asarray(b)
        scale = max(np.abs(a).max(), np.abs(b).max())
        if scale == 0:
            continue
        for face in grid.faces():
            idx = grid.face_index(face)[1:]
            worst = max(worst, float(np.abs(a[idx] - b[idx]).max() / scale))
    return worst


def solve_ibvp(coeffs: CoefficientSet, data: IBVPData, source: tuple | None = None, *, record: str = "full",
               growth_factor: float = 10.0, window: int = 10, compat_rtol: float | None = 5e-2) -> SolveHistory:
    """Leapfrog solve of the coupled system.

    source = (F1, F2) adds forcing to Box u = w + F1 and to the w-equation
    (test-only extension for manufactured solutions).  record="traces" keeps
    only three-node boundary strips and the last four time levels.
    """
    grid = coeffs.grid
    n, dt, dx = grid.n, grid.dt, grid.dx
    if grid.cfl >= 1.0:
        raise SolverError(f"CFL number {grid.cfl:.3f} >= 1")
    psi = [np.asarray(p) for p in data.psi]
    batch = psi[0].shape[n:]
    nb = len(batch)
    events = []
    if compat_rtol is not None:
        defect = check_compatibility(grid, data)
        if defect > compat_rtol:
            raise SolverError(f"compatibility conditions violated (relative defect {defect:.3e})")
    op = SystemOperator(coeffs)
    if op.stability_number() > 0.25:
        events.append({"event": "coefficient magnitude beyond tested range", "value": op.stability_number()})
    F1, F2 = (None, None) if source is None else source
    I = (slice(1, -1),) * n
    c = coeffs

    def coef(arr, k):
        return _expand(arr[k][I], nb)

    def Ccoef(i, k):
        return _expand(c.C[i, k][I], nb)

    def src(F, k):
        return 0.0 if F is None else np.asarray(F[k])[I]

    dtype = np.result_type(*psi, np.float64)
    u0 = np.array(data.boundary("f", 0), dtype=dtype)
    u0[I] = psi[0][I]
    w0 = np.array(data.boundary("g", 0), dtype=dtype)
    lap0 = _lap_int(psi[0], dx, n)
    lap1 = _lap_int(psi[1], dx, n)
    w0[I] = psi[2][I] - lap0 - src(F1, 0)
    wt0 = psi[3][I] - lap1
    if F1 is not None:
        wt0 = wt0 - (np.asarray(F1[1])[I] - np.asarray(F1[0])[I]) / dt
    gradpsi0 = sum(Ccoef(i, 0) * _grad_int(psi[0], dx, n, i) for i in range(n)) if n else 0.0
    wtt0 = (_lap_int(w0, dx, n) - coef(c.A, 0) * w0[I] - coef(c.B, 0) * psi[1][I] - gradpsi0
            - coef(c.q, 0) * psi[0][I] + src(F2, 0))
    u1 = np.array(data.boundary("f", 1), dtype=dtype)
    u1[I] = psi[0][I] + dt * psi[1][I] + dt**2 / 2 * psi[2][I] + dt**3 / 6 * psi[3][I]
    w1 = np.array(data.boundary("g", 1), dtype=dtype)
    w1[I] = w0[I] + dt * wt0 + dt**2 / 2 * wtt0

    full = record == "full"
    if full:
        U = np.empty(grid.shape + batch, dtype=dtype)
        W = np.empty(grid.shape + batch, dtype=dtype)
    else:
        strips = {(nm, f): np.empty((grid.nt, 3) + _face_shape(grid, f) + batch, dtype=dtype)
                  for nm in ("u", "w") for f in grid.faces()}

    def store(k, u, w):
        if full:
            U[k], W[k] = u, w
        else:
            for f in grid.faces():
                for nm, arr in (("u", u), ("w", w)):
                    strips[(nm, f)][k] = _face_strip(arr[None], grid, f, 3)[0]

    store(0, u0, w0)
    store(1, u1, w1)
    last = [u0, u1]
    lastw = [w0, w1]
    norms = [_norm(u0, w0), _norm(u1, w1)]
    u_prev, u, w_prev, w = u0, u1, w0, w1
    for k in range(1, grid.nt - 1):
        u_next = np.array(data.boundary("f", k + 1), dtype=dtype)
        u_next[I] = 2 * u[I] - u_prev[I] + dt**2 * (_lap_int(u, dx, n) + w[I] + src(F1, k))
        ut = (u_next[I] - u_prev[I]) / (2 * dt)
        rhs = _lap_int(w, dx, n) - coef(c.A, k) * w[I] - coef(c.B, k) * ut - coef(c.q, k) * u[I] + src(F2, k)
        for i in range(n):
            rhs = rhs - Ccoef(i, k) * _grad_int(u, dx, n, i)
        w_next = np.array(data.boundary("g", k + 1), dtype=dtype)
        w_next[I] = 2 * w[I] - w_prev[I] + dt**2 * rhs
        u_prev, u, w_prev, w = u, u_next, w, w_next
        store(k + 1, u, w)
        last.append(u)
        lastw.append(w)
        if len(last) > 4:
            last.pop(0)
            lastw.pop(0)
        norms.append(_norm(u, w))
        if not np.isfinite(norms[-1]):
            raise SolverError(f"non-finite solution at step {k + 1}")
        m = len(norms)
        if m % window == 0 and m >= 2 * window:
            cur, prev = max(norms[-window:]), max(norms[-2 * window:-window])
            if prev > 0 and cur > growth_factor * prev:
                raise SolverError(f"instability: norm grew {cur / prev:.1f}x over {window} steps at step {m}")
    if full:
        return SolveHistory(grid, U, W, events=events, batch_shape=batch)
    final = {"u": np.stack(last[-4:]), "w": np.stack(lastw[-4:])}
    return SolveHistory(grid, strips=strips, final=final, events=events, batch_shape=batch)


def _face_shape(grid: SpaceTimeGrid, face: Face) -> tuple:
    return tuple(m for i, m in enumerate(grid.nx) if i != face.axis)


def _norm(u, w) -> float:
    return float(np.sqrt(np.sum(np.abs(u) ** 2) + np.sum(np.abs(w) ** 2)))


def _sobolev_fd(v: np.ndarray, spacing, order: int, axes) -> float:
    """Unweighted H^order norm with np.gradient derivatives along the given axes."""
    total = 0.0
    dv = float(np.prod([spacing[a] for a in axes]))
    for m in range(order + 1):
        for combo in itertools.combinations_with_replacement(axes, m):
            d = v
            for a in combo:
                d = np.gradient(d, spacing[a], axis=a, edge_order=2)
            total += float(np.sum(np.abs(d) ** 2)) * dv
    return float(np.sqrt(total))


def energy_report(history: SolveHistory, data: IBVPData | None = None) -> dict:
    """Per-step norms of u and w (H^2, d_t in H^1, d_t^2 in L^2) and the data norm."""
    if not history.full:
        raise ValueError("energy_report needs a full history")
    g = history.grid
    sp = list(g.dx)
    axes = list(range(g.n))
    series = {}
    for nm, arr in (("u", history.u), ("w", history.w)):
        vt = np.gradient(arr, g.dt, axis=0, edge_order=2)
        vtt = np.gradient(vt, g.dt, axis=0, edge_order=2)
        series[f"{nm}_H2"] = np.array([_sobolev_fd(arr[k], sp, 2, axes) for k in range(g.nt)])
        series[f"{nm}t_H1"] = np.array([_sobolev_fd(vt[k], sp, 1, axes) for k in range(g.nt)])
        series[f"{nm}tt_L2"] = np.array([_sobolev_fd(vtt[k], sp, 0, axes) for k in range(g.nt)])
    left = sum(series.values())
    out = {"series": series, "left": float(left.max())}
    if data is not None:
        psi = [np.asarray(p) for p in data.psi]

        def lap(p):
            return sum(np.gradient(np.gradient(p, g.dx[i], axis=i, edge_order=2), g.dx[i], axis=i, edge_order=2)
                       for i in axes)

        right = (_sobolev_fd(psi[0], sp, 4, axes) + _sobolev_fd(psi[1], sp, 3, axes)
                 + _sobolev_fd(psi[2] - lap(psi[0]), sp, 1, axes) + _sobolev_fd(psi[3] - lap(psi[1]), sp, 0, axes))
        f = np.stack([data.boundary("f", k) for k in range(g.nt)])
        gg = np.stack([data.boundary("g", k) for k in range(g.nt)])
        for face in g.faces():
            idx = g.face_index(face)
            fsp = [g.dt] + [g.dx[i] for i in axes if i != face.axis]
            fax = list(range(len(fsp)))
            right += _sobolev_fd(f[idx], fsp, 4, fax) + _sobolev_fd(gg[idx], fsp, 2, fax)
        out["right"] = float(right)
        out["ratio"] = float(out["left"] / right) if right > 0 else 0.0
    return out


@dataclass
class MeasurementBundle:
    """Input data, G-face Neumann traces and final-time traces.

    ``simulated`` holds solver-state quantities that are not part of the
    measurement (Sigma minus G traces, w(T), w_t(T)).
    """

    input: IBVPData
    omega0: tuple
    margin: float
    G: list
    dnu_u: dict
    dnu_w: dict
    uT: np.ndarray
    utT: np.ndarray
    uttT: np.ndarray
    simulated: dict = field(default_factory=dict)
    events: list = field(default_factory=list)


def measurement_operator(coeffs: CoefficientSet, data: IBVPData, omega0, margin: float = 0.1,
                         record: str = "traces", **solver_kw) -> MeasurementBundle:
    """Solve and extract d_nu u, d_nu Box u on G and (u, u_t, u_tt) at t = T."""
    grid = coeffs.grid
    G, rest = split_faces(grid, omega0, margin)
    if not any(f.dot(omega0) < 0 for f in G) and any(f.dot(omega0) < 0 for f in grid.faces()):
        raise ValueError("G must contain the illuminated faces")
    hist = solve_ibvp(coeffs, data, record=record, **solver_kw)
    dnu_u = {f: hist.normal_derivative("u", f) for f in G}
    dnu_w = {f: hist.normal_derivative("w", f) for f in G}
    sim = {"dnu_u": {f: hist.normal_derivative("u", f) for f in rest},
           "dnu_w": {f: hist.normal_derivative("w", f) for f in rest},
           "wT": hist.final_trace("w", 0), "wtT": hist.final_trace("w", 1), "history": hist}
    return MeasurementBundle(data, tuple(np.asarray(omega0, dtype=float)), margin, G, dnu_u, dnu_w,
                             hist.final_trace("u", 0), hist.final_trace("u", 1), hist.final_trace("u", 2),
                             simulated=sim, events=hist.events)
