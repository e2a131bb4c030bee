"""Light ray transform, Fourier slices and box-restricted inversion.

Rays are s -> y + s (1, -omega).  Hyperplane base points are k(z) =
(omega.z, z), z in R^n, which lie on (1, -omega)^perp; the map (z, s) ->
k(z) + s (1, -omega) has Jacobian 2 and the hyperplane surface element is
sqrt(2) dz.  With this parametrisation

    f_hat(xi) = 2 int e^{-i xi.k(z)} (Lf)(k(z)) dz = sqrt(2) * (hyperplane integral),

for xi orthogonal to (1, -omega).  SliceData stores the hyperplane
integral and exposes f_hat = sqrt(2) * value.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import linalg, ndimage

from .spacetime.fields import SCALAR, VECTOR, FieldSample
from .spacetime.grid import Direction, SpaceTimeGrid, null_projection
from .spacetime.quadrature import trapezoid_weights

SLICE_NORM = float(np.sqrt(2.0))


# sampling helpers -----------------------------------------------------------

def _origin(grid: SpaceTimeGrid) -> np.ndarray:
    return np.array([grid.t0] + [a for a, _ in grid.omega_box])


def sample(values: np.ndarray, grid: SpaceTimeGrid, pts: np.ndarray, order: int = 1) -> np.ndarray:
    """Interpolate node values at space-time points (..., 1+n); zero off the grid."""
    pts = np.asarray(pts, float)
    coords = ((pts - _origin(grid)) / grid.h).reshape(-1, grid.n + 1).T
    kw = dict(order=order, mode="grid-constant", cval=0.0, prefilter=order > 1)
    if np.iscomplexobj(values):
        out = (ndimage.map_coordinates(values.real, coords, **kw)
               + 1j * ndimage.map_coordinates(values.imag, coords, **kw))
    else:
        out = ndimage.map_coordinates(np.asarray(values, float), coords, **kw)
    return out.reshape(pts.shape[:-1])


def support_box(values: np.ndarray, grid: SpaceTimeGrid, tol: float = 0.0):
    """Bounding box (lo, hi) of the nodes where |values| > tol, or None."""
    mask = np.abs(values) > tol
    if not mask.any():
        return None
    lo, hi = [], []
    for k, ax in enumerate(grid.axes()):
        other = tuple(j for j in range(grid.n + 1) if j != k)
        idx = np.nonzero(mask.any(axis=other))[0]
        lo.append(ax[max(idx[0] - 1, 0)])
        hi.append(ax[min(idx[-1] + 1, ax.size - 1)])
    return np.array(lo), np.array(hi)


# ray families ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RayFamily:
    """Rays y + s (1, -omega) for base points y and quadrature nodes s."""

    dir: Direction
    base: np.ndarray
    s: np.ndarray
    zaxes: tuple | None = None

    @property
    def step(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def extent(self) -> tuple:
        return float(self.s[0]), float(self.s[-1])

    @classmethod
    def through(cls, dir: Direction, base, step: float, extent: float) -> "RayFamily":
        m = int(np.ceil(extent / step))
        return cls(dir, np.atleast_2d(np.asarray(base, float)), step * np.arange(-m, m + 1))

    @classmethod
    def hyperplane(cls, dir: Direction, grid: SpaceTimeGrid, spacing: float | None = None,
                   step: float | None = None, bbox=None) -> "RayFamily":
        """Base points k(z) on a tensor z-grid covering the projection of ``bbox`` (default: Q)."""
        lo, hi = (np.array([grid.t0] + [a for a, _ in grid.omega_box]),
                  np.array([grid.T] + [b for _, b in grid.omega_box])) if bbox is None else bbox
        w = dir.vec
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        s_pt = (corners[:, 0] - corners[:, 1:] @ w) / 2.0
        z_pt = corners[:, 1:] + s_pt[:, None] * w
        dz = float(min(grid.dx)) if spacing is None else float(spacing)
        ds = min(grid.dt, min(grid.dx)) / 2.0 if step is None else float(step)
        zaxes = []
        for i in range(grid.n):
            a, b = z_pt[:, i].min() - dz, z_pt[:, i].max() + dz
            m = int(np.ceil((b - a) / dz))
            zaxes.append(a + dz * np.arange(m + 1))
        Z = np.stack(np.meshgrid(*zaxes, indexing="ij"), axis=-1).reshape(-1, grid.n)
        base = np.column_stack([Z @ w, Z])
        s0, s1 = s_pt.min() - 2 * ds, s_pt.max() + 2 * ds
        m = int(np.ceil((s1 - s0) / ds))
        return cls(dir, base, s0 + ds * np.arange(m + 1), tuple(zaxes))


def _check_cover(values, grid, family: RayFamily):
    box = support_box(values, grid)
    if box is None:
        return
    lo, hi = box
    e = family.dir.null_vector
    for s in family.extent:
        p = family.base + s * e
        inside = np.all((p > lo) & (p < hi), axis=1)
        if inside.any():
            raise ValueError("ray extent is shorter than the support of the integrand")


def lrt_scalar(f: FieldSample, family: RayFamily, order: int = 1, chunk: int = 4096) -> np.ndarray:
    """(Lf)(y) = int f(y + s(1,-omega)) ds, composite trapezoid in s, spline interpolation of ``order``."""
    if f.rank != SCALAR:
        raise ValueError("lrt_scalar expects a scalar field")
    vals = f.values
    _check_cover(vals, f.grid, family)
    e = family.dir.null_vector
    w = trapezoid_weights(family.s.size, family.step)
    coef = ndimage.spline_filter(vals.real, order, mode="grid-constant") if order > 1 else vals.real
    coef_i = None
    if np.iscomplexobj(vals):
        coef_i = ndimage.spline_filter(vals.imag, order, mode="grid-constant") if order > 1 else vals.imag
    out = np.zeros(len(family.base), dtype=complex if coef_i is not None else float)
    org, hh = _origin(f.grid), f.grid.h
    for a in range(0, len(family.base), chunk):
        pts = family.base[a:a + chunk, None, :] + family.s[None, :, None] * e
        coords = ((pts - org) / hh).reshape(-1, f.grid.n + 1).T
        kw = dict(order=order, mode="grid-constant", cval=0.0, prefilter=False)
        v = ndimage.map_coordinates(coef, coords, **kw)
        if coef_i is not None:
            v = v + 1j * ndimage.map_coordinates(coef_i, coords, **kw)
        out[a:a + chunk] = v.reshape(pts.shape[:2]) @ w
    return out


def contract(Bt: FieldSample, dir: Direction) -> FieldSample:
    """(1, -omega) . Bt as a scalar field."""
    if Bt.rank != VECTOR:
        raise ValueError("a space-time vector field is required")
    return FieldSample(Bt.grid, np.tensordot(dir.null_vector, Bt.values, axes=(0, 0)))


def lrt_vector(Bt: FieldSample, family: RayFamily, order: int = 1) -> np.ndarray:
    """Ray transform of the contraction (1,-omega).Bt; Bt is laid out as (B, -C)."""
    return lrt_scalar(contract(Bt, family.dir), family, order)


# Fourier transforms ---------------------------------------------------------

def dtft(values: np.ndarray, axes, freqs, weights=None, chunk: int | None = None) -> np.ndarray:
    """sum_y w(y) e^{-i k.y} f(y) on a tensor grid for each row k of ``freqs``.

    ``values`` has the grid axes first and optional trailing batch axes; the
    result has shape (len(freqs), *batch).  Weights default to trapezoid.
    """
    freqs = np.atleast_2d(np.asarray(freqs, float))
    d = len(axes)
    if weights is None:
        weights = [trapezoid_weights(a.size, a[1] - a[0]) for a in axes]
    batch = values.shape[d:]
    nb = int(np.prod(batch)) if batch else 1
    f = values.reshape(values.shape[:d] + (nb,))
    if chunk is None:
        per = int(np.prod(values.shape[:d - 1])) * nb * 16 if d > 1 else nb * 16
        chunk = max(1, min(len(freqs), int(2e8 // max(per, 1))))
    out = np.empty((len(freqs), nb), dtype=complex)
    for a in range(0, len(freqs), chunk):
        K = freqs[a:a + chunk]
        E = [np.exp(-1j * np.outer(K[:, k], axes[k])) * weights[k] for k in range(d)]
        G = np.tensordot(E[d - 1], f, axes=([1], [d - 1]))  # (m, N0..N_{d-2}, nb)
        for k in range(d - 2, -1, -1):
            G = np.einsum("m...jb,mj->m...b", G, E[k])
        out[a:a + chunk] = G
    return out.reshape((len(freqs),) + batch)


def fourier_transform(f: FieldSample, xis) -> np.ndarray:
    """Trapezoid-rule Fourier transform int e^{-i xi.(t,x)} f over Q (f extended by zero)."""
    return dtft(f.values, f.grid.axes(), xis)


@dataclass
class SliceData:
    """Hyperplane integrals int_{(1,-omega)^perp} e^{-i xi.y} (Lf)(y) dS(y) at frequencies xi."""

    omega: tuple
    xi: np.ndarray
    values: np.ndarray
    provenance: str = "fourier_slice"
    norm: float = SLICE_NORM

    def __post_init__(self):
        self.omega = tuple(float(w) for w in self.omega)
        self.xi = np.atleast_2d(np.asarray(self.xi, float))
        self.values = np.asarray(self.values, complex).reshape(-1)
        if len(self.values) != len(self.xi):
            raise ValueError("one value per frequency is required")
        self.check()

    def check(self, tol: float = 1e-12):
        e = np.concatenate(([1.0], -np.asarray(self.omega)))
        defect = np.abs(self.xi @ e) / np.maximum(1.0, np.abs(self.xi).max(axis=1))
        if np.any(defect > tol):
            raise ValueError("slice frequency not orthogonal to (1, -omega)")

    @property
    def fhat(self) -> np.ndarray:
        """The (1+n)-dimensional Fourier transform at xi."""
        return self.norm * self.values

    @classmethod
    def from_fhat(cls, omega, xi, fhat, provenance: str) -> "SliceData":
        return cls(omega, xi, np.asarray(fhat) / SLICE_NORM, provenance)

    def to_csv(self, path) -> Path:
        return write_slices(path, [self])


def write_slices(path, slices) -> Path:
    path = Path(path)
    n = len(slices[0].omega)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"omega{i + 1}" for i in range(n)] + [f"xi{i}" for i in range(n + 1)]
                   + ["real", "imag", "provenance"])
        for sd in slices:
            for x, v in zip(sd.xi, sd.values):
                w.writerow([repr(c) for c in sd.omega] + [repr(float(c)) for c in x]
                           + [repr(float(v.real)), repr(float(v.imag)), sd.provenance])
    return path


def read_slices(path) -> list:
    groups: dict = {}
    with Path(path).open() as fh:
        r = csv.reader(fh)
        head = next(r)
        n = sum(1 for c in head if c.startswith("omega"))
        for row in r:
            om = tuple(float(c) for c in row[:n])
            key = (om, row[-1])
            xi = [float(c) for c in row[n:2 * n + 1]]
            val = complex(float(row[2 * n + 1]), float(row[2 * n + 2]))
            groups.setdefault(key, ([], []))
            groups[key][0].append(xi)
            groups[key][1].append(val)
    return [SliceData(om, np.array(x), np.array(v), prov) for (om, prov), (x, v) in groups.items()]


def hyperplane_frequencies(dir: Direction, eta) -> np.ndarray:
    """xi = (omega.eta, eta) for each row eta in R^n."""
    eta = np.atleast_2d(np.asarray(eta, float))
    return np.column_stack([eta @ dir.vec, eta])


def fourier_slice(f: FieldSample, dir: Direction, xis, order: int = 1, spacing: float | None = None,
                  step: float | None = None) -> SliceData:
    """Hyperplane Fourier transform of the ray transform of f at xi orthogonal to (1, -omega)."""
    xis = np.atleast_2d(np.asarray(xis, float))
    for x in xis:
        if abs(null_projection(x, dir.omega)) > 1e-12 * max(1.0, np.abs(x).max()):
            raise ValueError("xi is not in the hyperplane (1, -omega)^perp")
    box = support_box(f.values, f.grid)
    if box is None:
        return SliceData(dir.omega, xis, np.zeros(len(xis)), "fourier_slice")
    fam = RayFamily.hyperplane(dir, f.grid, spacing, step, box)
    Lf = lrt_scalar(f, fam, order).reshape(tuple(a.size for a in fam.zaxes))
    k = xis[:, :1] * dir.vec[None, :] + xis[:, 1:]
    vals = SLICE_NORM * dtft(Lf, list(fam.zaxes), k)
    return SliceData(dir.omega, xis, vals, "fourier_slice")


# box-restricted least squares -----------------------------------------------

@dataclass
class Reconstruction:
    """Field on the nodes of a box grid (zero on the box boundary), with an inversion report."""

    grid: SpaceTimeGrid
    values: np.ndarray
    report: dict = field(default_factory=dict)

    @property
    def ncomp(self) -> int:
        return 1 if self.values.ndim == self.grid.n + 1 else self.values.shape[0]

    def sample_on(self, grid: SpaceTimeGrid, order: int = 3) -> np.ndarray:
        """Cubic-spline interpolation of the reconstruction to the nodes of another grid."""
        pts = grid.points()
        if self.ncomp == 1 and self.values.ndim == self.grid.n + 1:
            return sample(self.values, self.grid, pts, order)
        return np.stack([sample(v, self.grid, pts, order) for v in self.values])


def box_grid(box, shape) -> SpaceTimeGrid:
    """Reconstruction grid with ``shape`` nodes spanning ``box`` = [(t0,T), (a1,b1), ...]."""
    box = [tuple(map(float, b)) for b in box]
    shape = tuple(int(m) for m in np.broadcast_to(shape, (len(box),)))
    return SpaceTimeGrid(box[0][1], tuple(box[1:]), shape[0], shape[1:], t0=box[0][0])


def _stack_slices(slices, weights=None):
    xis, data, oms, w = [], [], [], []
    for k, sd in enumerate(slices):
        xis.append(sd.xi)
        data.append(sd.fhat)
        oms.append(np.repeat(np.asarray(sd.omega)[None], len(sd.xi), axis=0))
        w.append(np.full(len(sd.xi), 1.0 if weights is None else float(weights[k])))
    if not xis:
        raise ValueError("empty frequency set")
    return np.concatenate(xis), np.concatenate(data), np.concatenate(oms), np.concatenate(w)


def coverage_tag(omegas) -> str:
    """'full-circle' for n = 2 sweeps without angular gaps above pi/4, else 'cone'."""
    om = np.unique(np.round(np.atleast_2d(omegas), 12), axis=0)
    if om.shape[1] != 2:
        return "cone" if om.shape[1] > 2 else "line"
    th = np.sort(np.arctan2(om[:, 1], om[:, 0]))
    gaps = np.diff(np.concatenate([th, th[:1] + 2 * np.pi]))
    return "full-circle" if gaps.max() < np.pi / 4 else "cone"


def solve_box_ls(xis, data, rg: SpaceTimeGrid, contraction=None, lam: float = 1e-8, chunk: int = 1024,
                 row_weights=None, node_weight=None, prior: str = "identity") -> tuple:
    """Real unknowns on interior nodes of ``rg`` fitting sum_j vol e^{-i xi.y_j} w(y_j) (c . f_j) to data.

    ``contraction`` is (m, ncomp) or None (scalar).  ``node_weight`` is an
    optional callable (row slice, nodes (N, 1+n)) -> (rows, N) giving w.
    ``prior`` selects the penalty: "identity" (|f|^2) or "gradient" (the
    discrete Dirichlet gradient seminorm, which favours smooth extensions
    into frequencies outside the data set).  Tikhonov term
    lam * mean(diag G) * |f|^2 on the normal equations G f = b.  Solved by a
    Cholesky factorisation (deterministic).  Returns (values, report).
    """
    inner = tuple(slice(1, -1) for _ in range(rg.n + 1))
    Y = rg.points()[inner].reshape(-1, rg.n + 1)
    N = len(Y)
    ncomp = 1 if contraction is None else contraction.shape[1]
    vol = rg.cell_volume
    rw = np.ones(len(xis)) if row_weights is None else np.asarray(row_weights, float)
    G = np.zeros((ncomp * N, ncomp * N))
    b = np.zeros(ncomp * N)
    for a in range(0, len(xis), chunk):
        E = np.exp(-1j * xis[a:a + chunk] @ Y.T) * vol
        if node_weight is not None:
            E = E * node_weight(slice(a, a + chunk), Y)
        if contraction is not None:
            E = np.concatenate([E * contraction[a:a + chunk, c:c + 1] for c in range(ncomp)], axis=1)
        Ew = E * np.sqrt(rw[a:a + chunk])[:, None]
        G += (Ew.conj().T @ Ew).real
        b += (Ew.conj().T @ (data[a:a + chunk] * np.sqrt(rw[a:a + chunk]))).real
    scale = float(np.mean(np.diag(G)))
    if prior == "identity":
        P = np.eye(len(G))
    elif prior == "gradient":
        L = _dirichlet_stiffness(tuple(m - 2 for m in rg.shape), rg.h)
        P = np.kron(np.eye(ncomp), L / np.mean(np.diag(L)))
    else:
        raise ValueError(f"unknown prior {prior!r}")
    Greg = G + lam * scale * P
    try:
        cf = linalg.cho_factor(Greg, lower=True, check_finite=False)
        x = linalg.cho_solve(cf, b, check_finite=False)
        dg = np.abs(np.diag(cf[0]))
        cond = float((dg.max() / dg.min()) ** 2)
        method = "cholesky"
    except linalg.LinAlgError:
        x = linalg.lstsq(Greg, b)[0]
        cond, method = float("inf"), "lstsq"
    resid, norm = 0.0, 0.0
    for a in range(0, len(xis), chunk):
        E = np.exp(-1j * xis[a:a + chunk] @ Y.T) * vol
        if node_weight is not None:
            E = E * node_weight(slice(a, a + chunk), Y)
        xs = x.reshape(ncomp, N)
        if contraction is None:
            pred = E @ xs[0]
        else:
            pred = sum((E @ xs[c]) * contraction[a:a + chunk, c] for c in range(ncomp))
        resid += float(np.sum(rw[a:a + chunk] * np.abs(pred - data[a:a + chunk]) ** 2))
        norm += float(np.sum(rw[a:a + chunk] * np.abs(data[a:a + chunk]) ** 2))
    vals = np.zeros((ncomp,) + rg.shape)
    for c in range(ncomp):
        vals[c][inner] = x.reshape(ncomp, N)[c].reshape(tuple(m - 2 for m in rg.shape))
    report = {"lam": lam, "lam_scale": scale, "prior": prior, "n_freq": int(len(xis)), "n_unknown": int(ncomp * N),
              "match_residual": float(np.sqrt(resid / norm)) if norm > 0 else 0.0, "cond_estimate": cond,
              "method": method, "ill_conditioned": bool(cond > 1e14)}
    return (vals[0] if contraction is None else vals), report


def _dirichlet_stiffness(shape, spacing) -> np.ndarray:
    """Matrix of sum_k |D_k f|^2 on interior nodes with zero boundary values (negative discrete Laplacian)."""
    mats = []
    for m, d in zip(shape, spacing):
        mats.append((2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)) / d**2)
    out = np.zeros((int(np.prod(shape)),) * 2)
    for k, K in enumerate(mats):
        term = np.ones((1, 1))
        for j, m in enumerate(shape):
            term = np.kron(term, K if j == k else np.eye(m))
        out += term
    return out


def _out_of_set_energy(values: np.ndarray, rg: SpaceTimeGrid, radius: float, seed: int = 0, count: int = 400):
    """Mean |f_hat|^2 on timelike frequencies over the mean on spacelike ones, both within ``radius``."""
    rng = np.random.default_rng(seed)
    P = rng.uniform(-radius, radius, (4 * count, rg.n + 1))
    P = P[np.linalg.norm(P, axis=1) <= radius]
    tl = P[np.abs(P[:, 0]) > np.linalg.norm(P[:, 1:], axis=1)][:count]
    sl = P[np.abs(P[:, 0]) <= np.linalg.norm(P[:, 1:], axis=1)][:count]
    Ft = dtft(values, rg.axes(), tl)
    Fs = dtft(values, rg.axes(), sl)
    den = float(np.mean(np.abs(Fs) ** 2))
    return float(np.mean(np.abs(Ft) ** 2)) / den if den > 0 else 0.0


def invert_scalar(slices, box, shape, lam: float = 1e-8, coverage: str | None = None,
                  prior: str = "identity", node_weight=None, row_weights=None) -> Reconstruction:
    """Field supported in ``box`` whose Fourier transform matches the slice data.

    Least squares over node values on a box grid with ``shape`` nodes (zero
    boundary nodes), Tikhonov-regularised with relative parameter ``lam``.
    The report gives the relative match residual on the frequency set S,
    the timelike/spacelike spectral energy ratio of the result, a condition
    estimate and the coverage tag (full-circle or cone).  ``node_weight``
    (see solve_box_ls) turns the model into a weighted transform;
    ``row_weights`` weights the stacked slice rows.
    """
    xis, data, oms, _ = _stack_slices(slices)
    rg = box_grid(box, shape)
    vals, rep = solve_box_ls(xis, data, rg, None, lam, row_weights=row_weights, prior=prior,
                             node_weight=node_weight)
    rep["coverage"] = coverage or coverage_tag(oms)
    rep["radius"] = float(np.max(np.linalg.norm(xis, axis=1)))
    rep["outside_energy_ratio"] = _out_of_set_energy(vals, rg, rep["radius"])
    return Reconstruction(rg, vals, rep)


def invert_vector(slices, box, shape, lam: float = 1e-8, coverage: str | None = None,
                  weighted=None, prior: str = "identity") -> Reconstruction:
    """Space-time vector field Bt supported in ``box`` from slices of (1,-omega).Bt.

    Without ``weighted`` the gauge directions grad Phi are in the null space
    and the Tikhonov term selects the minimum-norm representative.
    ``weighted`` holds slices of (t - omega.x)(1,-omega).Bt; fitting them
    jointly removes the gauge freedom for compactly supported potentials.
    """
    xis, data, oms, _ = _stack_slices(slices)
    nw = None
    if weighted:
        wx, wd, wo, _ = _stack_slices(weighted)
        flag = np.concatenate([np.zeros(len(xis), bool), np.ones(len(wx), bool)])
        xis, data, oms = np.concatenate([xis, wx]), np.concatenate([data, wd]), np.concatenate([oms, wo])

        def nw(rows, Y):
            ell = Y[:, 0][None, :] - oms[rows] @ Y[:, 1:].T
            return np.where(flag[rows][:, None], ell, 1.0)
    rg = box_grid(box, shape)
    con = np.column_stack([np.ones(len(oms)), -oms])
    vals, rep = solve_box_ls(xis, data, rg, con, lam, node_weight=nw, prior=prior)
    rep["coverage"] = coverage or coverage_tag(oms)
    rep["radius"] = float(np.max(np.linalg.norm(xis, axis=1)))
    rep["gauge_fixed"] = bool(weighted)
    return Reconstruction(rg, vals, rep)


# Helmholtz-type split -------------------------------------------------------

def _dirichlet_poisson(rhs: np.ndarray, spacing) -> np.ndarray:
    """Solve sum_k D_kk Phi = rhs on interior nodes, Phi = 0 on the grid boundary (DST-I)."""
    inner = tuple(slice(1, -1) for _ in range(rhs.ndim))
    r = rhs[inner]
    lam = np.zeros(r.shape)
    for k, (m, d) in enumerate(zip(r.shape, spacing)):
        j = np.arange(1, m + 1)
        ev = (2.0 - 2.0 * np.cos(np.pi * j / (m + 1))) / d**2
        shp = [1] * r.ndim
        shp[k] = m
        lam = lam + ev.reshape(shp)
    sol = sfft.idstn(sfft.dstn(r, type=1) / (-lam), type=1)
    out = np.zeros(rhs.shape)
    out[inner] = sol
    return out


def space_time_gradient(phi: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    return np.stack([np.gradient(phi, d, axis=k, edge_order=2) for k, d in enumerate(grid.h)])


def space_time_divergence(vec: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    return sum(np.gradient(vec[k], d, axis=k, edge_order=2) for k, d in enumerate(grid.h))


def decompose_vector(Bt: FieldSample) -> tuple:
    """Phi with Delta_{t,x} Phi = div_{t,x} Bt, Phi = 0 on the boundary of the grid; returns (Phi, Bt - grad Phi)."""
    if Bt.rank != VECTOR:
        raise ValueError("a space-time vector field is required")
    g = Bt.grid
    if not np.all(np.isfinite(Bt.values)):
        raise ValueError("non-finite input")
    phi = _dirichlet_poisson(space_time_divergence(Bt.values, g), g.h)
    res = Bt.values - space_time_gradient(phi, g)
    return FieldSample(g, phi), FieldSample(g, res, VECTOR)
