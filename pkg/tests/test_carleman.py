import mpmath
import numpy as np
import pytest

from bwlab.carleman import (ProbeError, boundary_samples, conjugate_apply, corpus, face_signs,
                            probe_boundary_estimate, probe_interior_estimate)
from bwlab.solver import CoefficientSet
from bwlab.spacetime.grid import Direction, SpaceTimeGrid


def _literal_wave(u, grid, node, h, omega, eps):
    """h^2 e^{-Psi} Box_h (e^{Psi} u) at one node in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    k, i, j = node
    t, x, y = grid.t[k], grid.x(0)[i], grid.x(1)[j]

    def psi(tt, xx, yy):
        val = (mpmath.mpf(tt) + omega[0] * mpmath.mpf(xx) + omega[1] * mpmath.mpf(yy)) / h
        if eps is not None:
            val -= mpmath.mpf(tt) ** 2 / (2 * eps)
        return val

    def E(a, b, c):
        return mpmath.exp(psi(grid.t[a], grid.x(0)[b], grid.x(1)[c])) * mpmath.mpf(float(u[a, b, c]))

    dt, dx, dy = (mpmath.mpf(s) for s in (grid.dt, grid.dx[0], grid.dx[1]))
    box = ((E(k + 1, i, j) - 2 * E(k, i, j) + E(k - 1, i, j)) / dt**2
           - (E(k, i + 1, j) - 2 * E(k, i, j) + E(k, i - 1, j)) / dx**2
           - (E(k, i, j + 1) - 2 * E(k, i, j) + E(k, i, j - 1)) / dy**2)
    return float(h**2 * mpmath.exp(-psi(t, x, y)) * box)


@pytest.mark.parametrize("eps", [None, 0.6])
def test_fused_stencil_matches_literal_conjugation(eps):
    g = SpaceTimeGrid.uniform(2, nx=21)
    u = corpus(g, seed=3, count=1)[2][1].real
    d = Direction.from_angle(0.5)
    h = 0.3 if eps is None else 0.1
    out = conjugate_apply(u, CoefficientSet.zeros(g), h, d, "wave", eps, "stencil").values
    for node in [(10, 10, 10), (5, 7, 12), (14, 12, 6)]:
        ref = _literal_wave(u, g, node, h, d.omega, eps)
        assert abs(out[node] - ref) <= 1e-9 * max(1.0, abs(ref))


def test_stencil_and_expansion_agree_to_truncation():
    g = SpaceTimeGrid.uniform(2, nx=41)
    u = corpus(g, seed=0, count=0)[0][1]
    d = Direction.from_angle(0.2)
    a = conjugate_apply(u, CoefficientSet.zeros(g), 0.4, d, "biwave", None, "stencil").values
    b = conjugate_apply(u, CoefficientSet.zeros(g), 0.4, d, "biwave", None, "expansion").values
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 0.1


def test_nonvanishing_sample_rejected():
    g = SpaceTimeGrid.uniform(2, nx=11)
    with pytest.raises(ProbeError):
        conjugate_apply(np.ones(g.shape), CoefficientSet.zeros(g), 0.5, Direction.from_angle(0.0))
    with pytest.raises(ProbeError):
        probe_boundary_estimate([np.ones(g.shape)], CoefficientSet.zeros(g), Direction.from_angle(0.0),
                                [1.0, 0.9, 0.8], guard=0)


def test_interior_probe_small_grid():
    g = SpaceTimeGrid.uniform(2, nx=21)
    rep = probe_interior_estimate(corpus(g, 1, 1), CoefficientSet.zeros(g), Direction.from_angle(0.0),
                                  [1.0, 0.8, 0.6, 0.5])
    assert rep.passed and all(np.isfinite(rep.C))
    assert len(rep.C) == 4


def test_face_signs_follow_omega():
    g = SpaceTimeGrid.uniform(2, nx=21)
    s = face_signs(g, Direction.from_angle(0.3))
    assert all((val >= 0) == (sign == "+") for val, sign in s.values())
    rep = probe_boundary_estimate(boundary_samples(g, 1), CoefficientSet.zeros(g), Direction.from_angle(0.3),
                                  [1.0, 0.8, 0.6])
    assert rep.notes["signs_ok"] and rep.notes["finite"]


def test_corpus_is_seeded():
    g = SpaceTimeGrid.uniform(2, nx=11)
    a = corpus(g, 5)
    b = corpus(g, 5)
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert not np.array_equal(corpus(g, 6)[2][1], a[2][1])
