"""Numerical probes of the interior and boundary Carleman estimates.

The probes evaluate both sides of an inequality over an h-sweep for a
corpus of test functions and report the empirical constant.  They
corroborate or falsify a boundedness trend; they do not prove anything.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conjugate import Phase, make_ops
from .go import GuardError, scale_guard
from .solver import CoefficientSet, _d2_full
from .spacetime.fields import FieldSample
from .spacetime.grid import Direction, Face, SpaceTimeGrid
from .spacetime.quadrature import integrate_face, integrate_Omega, integrate_Q
from .spacetime.sobolev import semiclassical_norm

DEFAULT_EPS = 0.25


class ProbeError(ValueError):
    """Preconditions of a probe are violated."""


@dataclass
class CarlemanReport:
    """h-sweep of one inequality: left side, right side and C(h) = left / right.

    For the boundary probe ``left`` is the controlled group and ``right`` the
    data group, so that C(h) is again the smallest admissible constant.
    """

    kind: str
    h: list
    left: list
    right: list
    C: list
    passed: bool
    terms: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = sorted(self.terms)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "left", "right", "C"] + names)
            for k, h in enumerate(self.h):
                w.writerow([repr(float(h)), repr(float(self.left[k])), repr(float(self.right[k])),
                            repr(float(self.C[k]))] + [repr(float(self.terms[m][k])) for m in names])
        return path


def _check_eps(h: float, eps: float | None):
    if eps is None:
        return
    if not 0.0 < eps < 1.0:
        raise ProbeError("eps must lie in (0, 1)")
    if h > eps / 5.0:
        raise GuardError(f"convexified weight needs h <= eps/5 = {eps / 5:.4g}, got h = {h}")


def conjugate_apply(u, coeffs: CoefficientSet | None, h: float, dir: Direction, variant: str = "biwave",
                    eps: float | None = None, method: str = "stencil", sign: int = 1) -> FieldSample:
    """h^4 e^{-w/h} L e^{w/h} u (biwave) or h^2 e^{-w/h} Box e^{w/h} u (wave), w = phi or phi_eps.

    u must vanish on the outermost node layer of Q; it is continued by zero
    so the result is defined on every node.  ``method="stencil"`` folds the
    exponentials into the difference weights (exact discrete conjugation),
    ``"expansion"`` conjugates the continuum operator and differences only u.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _check_eps(h, eps)
    if isinstance(u, FieldSample):
        grid, vals = u.grid, u.values
    else:
        grid, vals = coeffs.grid, np.asarray(u)
    if variant not in ("biwave", "wave"):
        raise ValueError(f"unknown variant {variant!r}")
    border = np.ones(grid.shape, bool)
    border[(slice(1, -1),) * (grid.n + 1)] = False
    if np.any(vals[border] != 0):
        raise ProbeError("u does not vanish on the boundary of Q; window it first")
    pad = 2
    ext, inner = grid.with_halo(pad, pad)
    big = np.zeros(ext.shape, dtype=complex)
    big[inner] = vals
    phase = Phase(dir.omega, h, sign, None, eps)
    ops = make_ops(ext, phase, method)
    for name in ("et_plus", "et_minus"):
        f = getattr(ops, name, None)
        if f is not None and not np.all(np.isfinite(f)):
            raise GuardError(f"exponent overflow in fused stencil: max|dPsi| = {np.max(np.abs(np.log(np.abs(f)))):.1f}")
    if variant == "wave":
        out = h**2 * ops.box(big)
    else:
        if coeffs is None:
            coeffs = CoefficientSet.zeros(grid)
        ce = _pad_coeffs(coeffs, ext, inner)
        out = h**4 * ops.biwave(big, ce.A, ce.B, ce.C, ce.q)
    return FieldSample(grid, out[inner])


def _pad_coeffs(coeffs: CoefficientSet, ext: SpaceTimeGrid, inner: tuple) -> CoefficientSet:
    def pad(a):
        return np.pad(a, [(s.start, n - s.stop) for s, n in zip(inner, ext.shape)], mode="edge")
    return CoefficientSet(ext, pad(coeffs.A), pad(coeffs.B), np.stack([pad(c) for c in coeffs.C]), pad(coeffs.q))


def zero_order_symbol(dir: Direction, h: float, t=0.0, eps: float | None = None, sign: int = 1):
    """Psi_t^2 - |grad Psi|^2 + Box Psi of the weight; 0 for phi since |omega| = 1."""
    return Phase(dir.omega, h, sign, None, eps).zero_order(np.asarray(t, float))


# test-function corpus -------------------------------------------------------

def _window(grid: SpaceTimeGrid, margin: float = 0.15) -> np.ndarray:
    """Smooth compactly supported window, zero within ``margin`` (fraction) of every side."""
    out = np.ones(grid.shape)
    for k, ax in enumerate(grid.axes()):
        a, b = ax[0], ax[-1]
        lo, hi = a + margin * (b - a), b - margin * (b - a)
        s = np.clip((ax - lo) / (hi - lo), 0.0, 1.0)
        prof = np.where((s > 0) & (s < 1), (16 * s * (1 - s)) ** 4, 0.0)
        shp = [1] * (grid.n + 1)
        shp[k] = ax.size
        out = out * prof.reshape(shp)
    return out


def corpus(grid: SpaceTimeGrid, seed: int = 0, count: int = 3) -> list:
    """Seeded test functions: a tensor bump, a modulated bump and random band-limited fields."""
    rng = np.random.default_rng(seed)
    win = _window(grid)
    mesh = grid.mesh()
    span = [ax[-1] - ax[0] for ax in grid.axes()]
    items = [("bump", win.astype(complex))]
    k = [2 * np.pi * 2 / s for s in span]
    items.append(("modulated", win * np.exp(1j * sum(kk * m for kk, m in zip(k, mesh)))))
    for j in range(count):
        field_ = np.zeros(grid.shape, complex)
        for _ in range(6):
            kk = [2 * np.pi * rng.integers(-3, 4) / s for s in span]
            ph = rng.uniform(0, 2 * np.pi)
            field_ = field_ + rng.normal() * np.exp(1j * (sum(a * m for a, m in zip(kk, mesh)) + ph))
        items.append((f"random{j}", win * field_))
    return items


# interior probe -------------------------------------------------------------

def _trend_pass(C) -> bool:
    C = np.asarray(C, float)
    return bool(np.all(np.isfinite(C)) and C.max() <= 2.0 * np.median(C))


def probe_interior_estimate(samples, coeffs: CoefficientSet | None, dir: Direction, hs, eps: float | None = None,
                            method: str = "stencil", guard: float = 10.0) -> CarlemanReport:
    """C(h) = h^2 ||u||_{L^2} / ||L_phi u||_{H^{-2}_scl}, maximised over the samples.

    ``samples`` is a list of arrays or (name, array) pairs on the grid of
    ``coeffs``.  Pass: finite and max over the sweep <= 2 x median.
    """
    hs = sorted((float(h) for h in hs), reverse=True)
    if coeffs is None:
        raise ValueError("coefficients (possibly zero) are required for the grid")
    grid = coeffs.grid
    named = [s if isinstance(s, tuple) else (f"u{k}", s) for k, s in enumerate(samples)]
    per = {}
    left_all, right_all = [], []
    for h in hs:
        scale_guard(grid, h, guard)
        _check_eps(h, eps)
    for name, u in named:
        u = np.asarray(u.values if isinstance(u, FieldSample) else u)
        L, R = [], []
        for h in hs:
            Lu = conjugate_apply(u, coeffs, h, dir, "biwave", eps, method).values
            L.append(h**2 * semiclassical_norm(u, 0, h, grid.h))
            R.append(semiclassical_norm(Lu, -2, h, grid.h))
        per[name] = (L, R)
    C, left, right = [], [], []
    for k in range(len(hs)):
        vals = [(per[m][0][k], per[m][1][k]) for m in per if per[m][0][k] > 0]
        if not vals:
            C.append(0.0)
            left.append(0.0)
            right.append(0.0)
            continue
        best = max(vals, key=lambda lr: lr[0] / lr[1] if lr[1] > 0 else np.inf)
        left.append(best[0])
        right.append(best[1])
        C.append(best[0] / best[1] if best[1] > 0 else np.inf)
    skipped = all(c == 0.0 for c in C)
    terms = {f"C[{m}]": [l / r if r > 0 else (0.0 if l == 0 else np.inf) for l, r in zip(*per[m])] for m in per}
    passed = True if skipped else _trend_pass(C)
    return CarlemanReport("interior", hs, left, right, C, passed, terms, list(per),
                          {"eps": eps, "method": method, "omega": list(dir.omega), "skipped": skipped})


# boundary probe -------------------------------------------------------------

def _box_full(u: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    out = _d2_full(u, 0, grid.dt)
    for i in range(grid.n):
        out = out - _d2_full(u, i + 1, grid.dx[i])
    return out


def _normal_derivative(u: np.ndarray, grid: SpaceTimeGrid, face: Face) -> np.ndarray:
    ax = face.axis + 1
    idx = [0, 1, 2] if face.side < 0 else [-1, -2, -3]
    v = [np.take(u, i, axis=ax) for i in idx]
    return (3 * v[0] - 4 * v[1] + v[2]) / (2 * grid.dx[face.axis])


def _hscl1_sq(v: np.ndarray, grid: SpaceTimeGrid, h: float) -> float:
    total = integrate_Q(np.abs(v) ** 2, grid)
    for k, d in enumerate(grid.h):
        total = total + h**2 * integrate_Q(np.abs(np.gradient(v, d, axis=k, edge_order=2)) ** 2, grid)
    return float(np.real(total))


def vanishing_defects(u: np.ndarray, grid: SpaceTimeGrid) -> dict:
    """Relative size of u, Box u on the lateral boundary and of d_t^l u (l<4) at t=0."""
    scale = max(float(np.max(np.abs(u))), 1e-300)
    bu = _box_full(u, grid)
    bscale = max(float(np.max(np.abs(bu))), 1e-300)
    out = {}
    out["u|Sigma"] = max(float(np.max(np.abs(u[grid.face_index(f)]))) for f in grid.faces()) / scale
    out["Box u|Sigma"] = max(float(np.max(np.abs(bu[grid.face_index(f)]))) for f in grid.faces()) / bscale
    d = u
    for l in range(4):
        lev = np.abs(d[0]).max()
        ref = max(float(np.abs(d).max()), 1e-300)
        out[f"dt^{l} u|t=0"] = float(lev) / ref
        d = np.diff(d, axis=0) / grid.dt
    return out


def face_signs(grid: SpaceTimeGrid, dir: Direction) -> dict:
    """nu . omega per face from the box normals, and the class it implies (+ shadowed, - illuminated)."""
    return {f.label: (f.dot(dir.omega), "+" if f.dot(dir.omega) >= 0 else "-") for f in grid.faces()}


def boundary_terms(u: np.ndarray, coeffs: CoefficientSet, dir: Direction, h: float) -> dict:
    """Every term of the boundary Carleman inequality for one u and h (squared norms)."""
    grid = coeffs.grid
    m = grid.mesh()
    phi = m[0] + sum(w * x for w, x in zip(dir.omega, m[1:]))
    wgt = np.exp(-phi / h)
    bu = _box_full(u, grid)
    Lu = _box_full(bu, grid) + coeffs.A * bu + coeffs.B * np.gradient(u, grid.dt, axis=0, edge_order=2) \
        + coeffs.q * u
    for i in range(grid.n):
        Lu = Lu + coeffs.C[i] * np.gradient(u, grid.dx[i], axis=i + 1, edge_order=2)
    levels = [u, h**2 * bu]
    wT = wgt[-1]
    terms = {"L:interior": float(np.real(integrate_Q(np.abs(wgt * h**4 * Lu) ** 2, grid)))}
    for k, v in enumerate(levels):
        vT = v[-1]
        for l in range(2):
            if l == 0:
                g2 = np.abs(vT) ** 2
            else:
                g2 = sum(np.abs(np.gradient(vT, grid.dx[i], axis=i, edge_order=2)) ** 2 for i in range(grid.n))
            pw = 4 + l if k == 0 else 2 + l
            terms[f"L:final[k={k},l={l}]"] = h**pw * float(np.real(integrate_Omega(wT**2 * g2, grid)))
    for l, v in enumerate(levels):
        minus = plus = 0.0
        for f in grid.faces():
            s = f.dot(dir.omega)
            dn = _normal_derivative(v, grid, f)
            wf = wgt[grid.face_index(f)]
            val = float(np.real(integrate_face(abs(s) * wf**2 * np.abs(dn) ** 2, grid, f)))
            if s < 0:
                minus += val
            else:
                plus += val
        terms[f"L:Sigma-[l={l}]"] = h ** (5 - 2 * l) * minus
        terms[f"R:Sigma+[l={l}]"] = h ** (5 - 2 * l) * plus
        terms[f"R:H1[l={l}]"] = h ** (4 - 2 * l) * _hscl1_sq(wgt * v, grid, h)
        vt = np.gradient(v, grid.dt, axis=0, edge_order=2)[-1]
        terms[f"R:final_dt[l={l}]"] = h ** (5 - 2 * l) * float(np.real(integrate_Omega(wT**2 * np.abs(vt) ** 2, grid)))
    return terms


def probe_boundary_estimate(samples, coeffs: CoefficientSet, dir: Direction, hs, tol: float = 0.1,
                            guard: float = 10.0) -> CarlemanReport:
    """C(h) = (controlled terms) / (data terms) of the boundary Carleman inequality.

    Samples must satisfy u = Box u = 0 on the lateral boundary and
    d_t^l u = 0 (l < 4) at t = 0 to the relative tolerance ``tol``.  Pass:
    every term finite, face signs consistent, and C at the smallest h at most
    twice the sweep median (no growth as h decreases).
    """
    hs = sorted((float(h) for h in hs), reverse=True)
    grid = coeffs.grid
    for h in hs:
        scale_guard(grid, h, guard)
    named = [s if isinstance(s, tuple) else (f"u{k}", s) for k, s in enumerate(samples)]
    signs = face_signs(grid, dir)
    sign_ok = all((s >= 0) == (c == "+") for s, c in signs.values())
    defects = {}
    for name, u in named:
        u = np.asarray(u.values if isinstance(u, FieldSample) else u)
        d = vanishing_defects(u, grid)
        defects[name] = d
        if max(d.values()) > tol:
            raise ProbeError(f"sample {name} violates the vanishing conditions: {d}")
    terms: dict = {}
    left, right, C = [], [], []
    for h in hs:
        worst = None
        for name, u in named:
            u = np.asarray(u.values if isinstance(u, FieldSample) else u)
            tm = boundary_terms(u, coeffs, dir, h)
            for k, v in tm.items():
                terms.setdefault(f"{k}[{name}]", []).append(v)
            data = sum(v for k, v in tm.items() if k.startswith("L:"))
            ctrl = sum(v for k, v in tm.items() if k.startswith("R:"))
            ratio = ctrl / data if data > 0 else (0.0 if ctrl == 0 else np.inf)
            if worst is None or ratio > worst[2]:
                worst = (ctrl, data, ratio)
        left.append(worst[0])
        right.append(worst[1])
        C.append(worst[2])
    finite = all(np.all(np.isfinite(v)) for v in terms.values()) and all(np.isfinite(C))
    zero = all(c == 0.0 for c in C)
    passed = bool(finite and sign_ok and (zero or C[-1] <= 2.0 * float(np.median(C))))
    return CarlemanReport("boundary", hs, left, right, C, passed, terms, [n for n, _ in named],
                          {"signs": signs, "signs_ok": sign_ok, "finite": finite, "defects": defects,
                           "omega": list(dir.omega)})


def boundary_samples(grid: SpaceTimeGrid, count: int = 2) -> list:
    """u = t^4 prod sin(k pi (x_i - a_i)/L_i): vanishes with Box u on the lateral boundary, 4 traces at t=0."""
    m = grid.mesh()
    out = []
    for k in range(1, count + 1):
        prof = np.ones(grid.shape)
        for i, (a, b) in enumerate(grid.omega_box):
            prof = prof * np.sin(k * np.pi * (m[i + 1] - a) / (b - a))
        out.append((f"t4sin{k}", np.broadcast_to((m[0] - grid.t0) ** 4 * prof, grid.shape).copy()))
    return out
