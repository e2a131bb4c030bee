"""Geometric-optics solutions e^{+-phi/h}(a0 + h a1) with phi = t + omega.x.

Amplitudes are stored in a reduced form: a_k = e^{-i xi.(t,x)} m_k with
smooth m_k, so that derivatives of the oscillating factor are taken
analytically and differences only ever act on m_k.  The transport operator
is T = d_t - omega.grad.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .conjugate import ExpansionOps, Phase
from .solver import CoefficientSet, _d2_full
from .spacetime import stencils as st
from .spacetime.fields import FieldSample
from .spacetime.grid import Direction, SpaceTimeGrid, null_projection
from .spacetime.quadrature import integrate_Q

GROWING, DECAYING = 1, -1
EXP_LIMIT = 700.0


class GuardError(ValueError):
    """A scale-separation or overflow guard was violated."""


@dataclass(frozen=True)
class FrequencyVector:
    """xi = (xi0, xi') with pairing xi.(t,x) = xi0 t + xi'.x."""

    xi: tuple

    def __post_init__(self):
        v = tuple(float(c) for c in self.xi)
        if not all(np.isfinite(v)):
            raise ValueError("frequency components must be finite")
        object.__setattr__(self, "xi", v)

    @classmethod
    def on_hyperplane(cls, eta, dir: Direction) -> "FrequencyVector":
        """The frequency (omega.eta, eta), orthogonal to (1, -omega)."""
        eta = np.asarray(eta, dtype=float)
        return cls((float(eta @ dir.vec),) + tuple(eta))

    def check(self, dir: Direction, tol: float = 1e-12):
        if abs(null_projection(self.xi, dir.omega)) > tol * max(1.0, np.abs(self.xi).max()):
            raise ValueError("xi is not orthogonal to (1, -omega)")

    @property
    def kappa(self) -> float:
        """|xi'|^2 - xi0^2, the symbol of Box at xi."""
        return float(np.sum(np.square(self.xi[1:])) - self.xi[0] ** 2)


def _shift(arr: np.ndarray, disp, order: int) -> np.ndarray:
    """Values at x + disp (index units per spatial axis), zero outside; axis 0 untouched."""
    s = (0.0,) + tuple(-d for d in disp)
    if np.iscomplexobj(arr):
        return (ndimage.shift(arr.real, s, order=order, mode="constant", cval=0.0, prefilter=order > 1)
                + 1j * ndimage.shift(arr.imag, s, order=order, mode="constant", cval=0.0, prefilter=order > 1))
    return ndimage.shift(arr, s, order=order, mode="constant", cval=0.0, prefilter=order > 1)


def transport_integrate(g, f0=None, dir: Direction | None = None, order: int = 1, grid: SpaceTimeGrid | None = None):
    """Solve T v = g with v(0, x) = f0(x) along characteristics.

    v(t, x) = int_0^t g(s, x + omega (t - s)) ds + f0(x + t omega), with the
    composite trapezoid rule in s and spatial interpolation of the given order
    (1 = linear); g is extended by zero off the grid.  t = 0 must be a grid
    level; earlier levels receive the signed integral.
    """
    if isinstance(g, FieldSample):
        grid, vals = g.grid, g.values
    else:
        vals = np.asarray(g)
    if grid is None or dir is None:
        raise ValueError("grid and direction are required")
    k0f = -grid.t0 / grid.dt
    k0 = int(round(k0f))
    if abs(k0f - k0) > 1e-9 or not 0 <= k0 < grid.nt:
        raise ValueError("t = 0 must be a grid level")
    dt, nt = grid.dt, grid.nt
    step = [w * dt / d for w, d in zip(dir.omega, grid.dx)]
    v = np.zeros(vals.shape, dtype=np.result_type(vals, float))
    tail = (1,) * (vals.ndim - 1)
    for m in range(-k0, nt - k0):
        if m == 0:
            ks = np.array([k for k in range(nt) if k != k0], dtype=int)
        elif m > 0:
            ks = np.arange(k0 + m, nt)
        else:
            ks = np.arange(0, k0)
            ks = ks[ks - m <= k0]
        if ks.size == 0:
            continue
        js = ks - m
        w = np.full(ks.size, dt)
        w[js == k0] -= 0.5 * dt
        if m == 0:
            w[ks > k0] -= 0.5 * dt
            w[ks < k0] = -0.5 * dt
        elif m < 0:
            w = -w
        v[ks] += w.reshape((-1,) + tail) * _shift(vals[js], [m * s for s in step], order)
    if f0 is not None:
        f0 = np.asarray(f0)
        for k in range(nt):
            disp = [w * grid.t[k] / d for w, d in zip(dir.omega, grid.dx)]
            v[k] += _shift(f0[None], disp, order)[0]
    out = v
    return FieldSample(grid, out) if isinstance(g, FieldSample) else out


def adjoint_coefficients(coeffs: CoefficientSet) -> CoefficientSet:
    """Coefficients of the formal L^2 adjoint written as Box^2 + A Box + B d_t + C.grad + q.

    A~ = A, B~ = 2 A_t - B, C~ = -2 grad A - C, q~ = Box A - B_t - div C + q.
    Derivatives: centered inside, second-order one-sided on the grid edges.
    """
    g = coeffs.grid
    A, B, C, q = coeffs.A, coeffs.B, coeffs.C, coeffs.q
    At = np.gradient(A, g.dt, axis=0, edge_order=2)
    gradA = np.stack([np.gradient(A, g.dx[i], axis=i + 1, edge_order=2) for i in range(g.n)])
    boxA = _d2_full(A, 0, g.dt) - sum(_d2_full(A, i + 1, g.dx[i]) for i in range(g.n))
    Bt = np.gradient(B, g.dt, axis=0, edge_order=2)
    divC = sum(np.gradient(C[i], g.dx[i], axis=i + 1, edge_order=2) for i in range(g.n))
    return CoefficientSet(g, A, 2 * At - B, -2 * gradA - C, boxA - Bt - divC + q, coeffs.regularity)


def apply_operator(coeffs: CoefficientSet, u: np.ndarray) -> np.ndarray:
    """Centered-difference Box^2 u + A Box u + B u_t + C.grad u + q u (NaN near the edges)."""
    g = coeffs.grid
    bu = st.dalembertian(u, g.dt, g.dx)
    out = st.dalembertian(bu, g.dt, g.dx) + coeffs.A * bu + coeffs.B * st.d1(u, 0, g.dt) + coeffs.q * u
    for i in range(g.n):
        out = out + coeffs.C[i] * st.d1(u, i + 1, g.dx[i])
    return out


@dataclass(eq=False)
class GOAnsatz:
    """e^{sign phi/h}(a0 + h a1) with a_k = e^{-i xi.(t,x)} m_k.

    m0, m1 live on ``ext`` (Q plus a halo); ``inner`` recovers Q.  m1 is
    stored as m1_base + kappa * m1_kappa, kappa = |xi'|^2 - xi0^2.
    """

    dir: Direction
    h: float
    sign: int
    grid: SpaceTimeGrid
    ext: SpaceTimeGrid
    inner: tuple
    m0: np.ndarray
    m1_base: np.ndarray
    m1_kappa: np.ndarray | None = None
    xi: FrequencyVector | None = None
    weight: str | None = None
    meta: dict = field(default_factory=dict)

    def with_h(self, h: float) -> "GOAnsatz":
        return GOAnsatz(self.dir, h, self.sign, self.grid, self.ext, self.inner, self.m0, self.m1_base,
                        self.m1_kappa, self.xi, self.weight, dict(self.meta))

    def with_xi(self, xi: FrequencyVector | None) -> "GOAnsatz":
        if xi is not None:
            xi.check(self.dir)
        return GOAnsatz(self.dir, self.h, self.sign, self.grid, self.ext, self.inner, self.m0, self.m1_base,
                        self.m1_kappa, xi, self.weight, dict(self.meta))

    @property
    def kappa(self) -> float:
        return 0.0 if self.xi is None else self.xi.kappa

    def m1(self) -> np.ndarray:
        if self.m1_kappa is None or self.kappa == 0.0:
            return self.m1_base
        return self.m1_base + self.kappa * self.m1_kappa

    def phase(self, eps: float | None = None) -> Phase:
        return Phase(self.dir.omega, self.h, self.sign, None if self.xi is None else self.xi.xi, eps)

    def modulation(self, grid: SpaceTimeGrid) -> np.ndarray:
        if self.xi is None:
            return np.ones(grid.shape)
        m = grid.mesh()
        return np.broadcast_to(np.exp(-1j * sum(k * c for k, c in zip(self.xi.xi, m))), grid.shape)

    @property
    def a0(self) -> FieldSample:
        return FieldSample(self.grid, self.modulation(self.grid) * self.m0[self.inner])

    @property
    def a1(self) -> FieldSample:
        return FieldSample(self.grid, self.modulation(self.grid) * self.m1()[self.inner])

    def amplitude(self, with_a1: bool = True) -> np.ndarray:
        """Reduced amplitude m0 + h m1 on the extended grid."""
        return self.m0 + self.h * self.m1() if with_a1 else self.m0.astype(float)


def _weight_factor(grid: SpaceTimeGrid, dir: Direction, weight: str | None) -> np.ndarray:
    if weight is None:
        return np.ones(grid.shape)
    if weight == "linear":
        m = grid.mesh()
        return np.broadcast_to(m[0] - sum(w * x for w, x in zip(dir.omega, m[1:])), grid.shape).astype(float)
    raise ValueError(f"unknown weight {weight!r}")


def extension_widths(grid: SpaceTimeGrid, dir: Direction, halo: int = 2) -> tuple:
    """Halo so that characteristics from Q back to t = 0 stay on the extended grid."""
    span = grid.T + halo * grid.dt
    lo, hi = [], []
    for w, d in zip(dir.omega, grid.dx):
        reach = int(math.ceil(span * abs(w) / d - 1e-9))
        lo.append(halo + (reach if w < 0 else 0))
        hi.append(halo + (reach if w > 0 else 0))
    return lo, hi


def _extend(arr: np.ndarray, inner: tuple, shape: tuple) -> np.ndarray:
    """C^1 continuation of a coefficient array onto the extended grid (odd reflection)."""
    pads = [(s.start, n - s.stop) for s, n in zip(inner, shape)]
    out = arr
    for ax, (a, b) in enumerate(pads):
        if a or b:
            m = out.shape[ax]
            pa, pb = min(a, m - 1), min(b, m - 1)
            out = np.pad(out, [(pa, pb) if k == ax else (0, 0) for k in range(out.ndim)], mode="reflect",
                         reflect_type="odd")
            if pa < a or pb < b:
                out = np.pad(out, [(a - pa, b - pb) if k == ax else (0, 0) for k in range(out.ndim)], mode="edge")
    return out


def extend_coefficients(coeffs: CoefficientSet, ext: SpaceTimeGrid, inner: tuple) -> CoefficientSet:
    sh = ext.shape
    C = np.stack([_extend(c, inner, sh) for c in coeffs.C])
    return CoefficientSet(ext, _extend(coeffs.A, inner, sh), _extend(coeffs.B, inner, sh), C,
                          _extend(coeffs.q, inner, sh), coeffs.regularity)


def transport_rhs(coeffs: CoefficientSet, dir: Direction, m0: np.ndarray, xi: FrequencyVector | None,
                  sign: int) -> np.ndarray:
    """Right side of the second transport equation in the reduced frame, by differences.

    -(sign/4) [2 (Box_xi T + T Box_xi) m0 + 2 A T m0 + (B + C.omega) m0],
    with Box_xi = e^{i xi.y} Box e^{-i xi.y}.
    """
    g = coeffs.grid
    ops = ExpansionOps(g, Phase(dir.omega, 1.0, 0, None if xi is None else xi.xi))
    Tm0 = ops.transport(m0)
    sym = ops.box(Tm0) + ops.transport(ops.box(m0))
    Cw = sum(w * c for w, c in zip(dir.omega, coeffs.C))
    return -(sign / 4.0) * (2 * sym + 2 * coeffs.A * Tm0 + (coeffs.B + Cw) * m0)


def build_amplitudes(coeffs: CoefficientSet, dir: Direction, xi: FrequencyVector | None = None,
                     weight: str | None = None, sign: int = GROWING, h: float = 1.0, halo: int = 2,
                     order: int = 1) -> GOAnsatz:
    """Amplitudes solving T^2 a0 = 0 and the second transport equation for a1.

    a0 = e^{-i xi.(t,x)} (1 or (1,-omega).(t,x)); a1 by two characteristic
    integrations with zero initial profiles.  For the decaying sign pass the
    coefficients of the adjoint operator.  The closed form of the right side
    (Ta0 = 0 unweighted, T(t - omega.x) = 2 weighted) is used and checked
    against the difference evaluation; the defect is kept in ``meta``.
    """
    if xi is not None:
        xi.check(dir)
    grid = coeffs.grid
    if abs(grid.t0) > 0:
        raise ValueError("amplitudes are built on grids starting at t = 0")
    lo, hi = extension_widths(grid, dir, halo)
    ext, inner = grid.with_halo(halo, lo, hi)
    ce = extend_coefficients(coeffs, ext, inner)
    m0 = _weight_factor(ext, dir, weight)
    Cw = sum(w * c for w, c in zip(dir.omega, ce.C))
    s = float(sign)
    if weight is None:
        base_rhs = -(s / 4.0) * (ce.B + Cw)
        kappa_rhs = None
    else:
        base_rhs = -(s / 4.0) * (4 * ce.A + (ce.B + Cw) * m0)
        kappa_rhs = np.full(ext.shape, -2.0 * s)
    closed = base_rhs + (0.0 if kappa_rhs is None or xi is None else xi.kappa * kappa_rhs)
    generic = transport_rhs(ce, dir, m0, xi, sign)
    core = tuple(slice(2, -2) for _ in range(ext.n + 1))
    scale = max(float(np.nanmax(np.abs(closed[core]))), 1.0)
    defect = float(np.nanmax(np.abs(generic[core] - closed[core]))) / scale
    if defect > 1e-6:
        raise AssertionError(f"closed-form transport right side disagrees with differences ({defect:.2e})")

    def inv_T2(r):
        return transport_integrate(transport_integrate(r, None, dir, order, ext), None, dir, order, ext)

    m1_base = inv_T2(base_rhs)
    m1_kappa = None if kappa_rhs is None else inv_T2(kappa_rhs)
    meta = {"rhs_defect": defect, "halo": (halo, lo, hi)}
    return GOAnsatz(dir, h, sign, grid, ext, inner, m0, m1_base, m1_kappa, xi, weight, meta)


def assemble_go_field(ansatz: GOAnsatz, with_a1: bool = True) -> FieldSample:
    """e^{sign phi/h}(a0 + h a1) on Q (complex)."""
    g = ansatz.grid
    ph = ansatz.phase()
    m = g.mesh()
    re = ph.real_part(*m)
    top = float(np.max(np.abs(re)))
    if top > EXP_LIMIT:
        raise GuardError(f"max|phi|/h = {top:.1f} exceeds the exponent range; increase h or rescale the domain")
    amp = ansatz.amplitude(with_a1)[ansatz.inner]
    vals = np.exp(ph.value(*m)) * amp
    return FieldSample(g, np.broadcast_to(vals, g.shape))


def scale_guard(grid: SpaceTimeGrid, h: float, factor: float = 10.0):
    if h < factor * max(grid.dt, max(grid.dx)):
        raise GuardError(f"h = {h} violates h >= {factor} max(dt, dx) = {factor * max(grid.dt, max(grid.dx)):.4g}")


def conjugated_residual(ansatz: GOAnsatz, op_coeffs: CoefficientSet, with_a1: bool = True) -> np.ndarray:
    """h^4 e^{-Psi} L(e^{Psi} (m0 + h m1)) on Q, by analytic conjugation."""
    ce = extend_coefficients(op_coeffs, ansatz.ext, ansatz.inner)
    ops = ExpansionOps(ansatz.ext, ansatz.phase())
    M = ansatz.amplitude(with_a1)
    r = ops.biwave(M, ce.A, ce.B, ce.C, ce.q)
    return ansatz.h**4 * r[ansatz.inner]


def residual_norm(ansatz: GOAnsatz, op_coeffs: CoefficientSet, with_a1: bool = True, margin: int = 3) -> float:
    """L^2(Q) norm of the conjugated residual without ``margin`` cells at every face.

    The faces carry the limited smoothness of the coefficient extension
    into the halo, which the fourth differences amplify.
    """
    r = conjugated_residual(ansatz, op_coeffs, with_a1)
    g = ansatz.grid
    if margin:
        r = r * _interior_mask(g, margin)
    return float(np.sqrt(np.real(integrate_Q(np.abs(r) ** 2, g))))


def _interior_mask(grid: SpaceTimeGrid, margin: int) -> np.ndarray:
    mask = np.zeros(grid.shape)
    mask[(slice(margin, -margin),) * (grid.n + 1)] = 1.0
    return mask


def fit_slope(hs, values) -> float:
    hs, values = np.asarray(hs, float), np.asarray(values, float)
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])


def verify_residual_order(coeffs: CoefficientSet, ansatz: GOAnsatz, hs, with_a1: bool = True,
                          guard: float = 10.0, margin: int = 3) -> dict:
    """R(h) = ||e^{-+phi/h} h^4 L(e^{+-phi/h}(a0 + h a1))||_{L^2(Q)} over an h-sweep and its log-log slope.

    ``coeffs`` are the coefficients of the operator the ansatz should solve
    (the adjoint coefficients for a decaying ansatz).
    """
    hs = sorted((float(h) for h in hs), reverse=True)
    if len(hs) < 3:
        raise ValueError("need at least three h values")
    for h in hs:
        scale_guard(coeffs.grid, h, guard)
    R = [residual_norm(ansatz.with_h(h), coeffs, with_a1, margin) for h in hs]
    report = {"h": hs, "R": R, "with_a1": with_a1, "sign": ansatz.sign, "weight": ansatz.weight,
              "margin": margin, "omega": list(ansatz.dir.omega), "xi": None if ansatz.xi is None else list(ansatz.xi.xi)}
    report["slope"] = fit_slope(hs, R) if min(R) > 0 else float("nan")
    return report
