import numpy as np
import pytest

from bwlab.spacetime.grid import Face, SpaceTimeGrid
from bwlab.solver import (CoefficientSet, IBVPData, SolverError, check_compatibility, energy_report,
                          measurement_operator, solve_ibvp)


def _bump_data(grid, amp=1.0):
    m = grid.mesh()
    x = m[1:]
    prof = amp
    for xi in x:
        prof = prof * np.where(np.abs(xi - 0.5) < 0.25, np.cos(2 * np.pi * (xi - 0.5)) ** 4, 0.0)
    psi0 = np.broadcast_to(prof, (1,) + grid.nx)[0].astype(float)
    z = IBVPData.zeros(grid)
    return IBVPData(z.f, z.g, (psi0,) + z.psi[1:])


def test_zero_data_gives_zero_fields():
    g = SpaceTimeGrid.uniform(2, nx=9)
    h = solve_ibvp(CoefficientSet.zeros(g), IBVPData.zeros(g))
    assert np.all(h.u == 0) and np.all(h.w == 0)


def test_linearity_in_data():
    g = SpaceTimeGrid.uniform(2, nx=13)
    c = CoefficientSet.from_functions(g, A=lambda t, x, y: 0.1 + 0 * t, q=lambda t, x, y: x * y)
    a, b = _bump_data(g, 1.0), _bump_data(g, 2.5)
    ua = solve_ibvp(c, a).u
    ub = solve_ibvp(c, b).u
    assert np.allclose(ub, 2.5 * ua, rtol=0, atol=1e-12 * np.abs(ub).max())


def test_trace_mode_matches_full_history():
    g = SpaceTimeGrid.uniform(2, nx=11)
    c = CoefficientSet.from_functions(g, B=lambda t, x, y: 0.2 + 0 * t)
    d = _bump_data(g)
    full = solve_ibvp(c, d)
    tr = solve_ibvp(c, d, record="traces")
    f = Face(0, 1)
    assert np.array_equal(full.normal_derivative("u", f), tr.normal_derivative("u", f))
    assert np.array_equal(full.final_trace("w", 1), tr.final_trace("w", 1))


def test_batched_data_matches_single_solves():
    g = SpaceTimeGrid.uniform(1, nx=21)
    c = CoefficientSet.zeros(g)
    d1, d2 = _bump_data(g, 1.0), _bump_data(g, -0.5)
    psi = tuple(np.stack([p1, p2], axis=-1) for p1, p2 in zip(d1.psi, d2.psi))
    z = IBVPData.zeros(g, (2,))
    both = solve_ibvp(c, IBVPData(z.f, z.g, psi)).u
    assert np.allclose(both[..., 0], solve_ibvp(c, d1).u)
    assert np.allclose(both[..., 1], solve_ibvp(c, d2).u)


def test_cfl_and_growth_guards():
    g = SpaceTimeGrid(1.0, ((0, 1),), 11, (21,))
    with pytest.raises(SolverError):
        solve_ibvp(CoefficientSet.zeros(g), IBVPData.zeros(g))
    g = SpaceTimeGrid.uniform(1, nx=21)
    c = CoefficientSet.from_functions(g, q=lambda t, x: -1e6 + 0 * t)
    with pytest.raises(SolverError):
        solve_ibvp(c, _bump_data(g))


def test_incompatible_data_rejected():
    g = SpaceTimeGrid.uniform(1, nx=21)
    z = IBVPData.zeros(g)
    psi0 = np.ones(g.nx)
    bad = IBVPData(z.f, z.g, (psi0,) + z.psi[1:])
    assert check_compatibility(g, bad) > 0.5
    with pytest.raises(SolverError):
        solve_ibvp(CoefficientSet.zeros(g), bad)


def test_energy_report_bounded_ratio():
    g = SpaceTimeGrid.uniform(2, nx=17)
    d = _bump_data(g)
    rep = energy_report(solve_ibvp(CoefficientSet.zeros(g), d), d)
    assert 0 < rep["ratio"] < 10


def test_measurement_operator_splits_faces():
    g = SpaceTimeGrid.uniform(2, nx=11)
    mb = measurement_operator(CoefficientSet.zeros(g), _bump_data(g), (1.0, 0.0))
    assert Face(0, -1) in mb.G and Face(0, 1) not in mb.G
    assert Face(0, 1) in mb.simulated["dnu_u"]
    assert mb.uT.shape == g.nx
    with pytest.raises(ValueError):
        CoefficientSet.from_functions(g, C=[lambda t, x, y: t])
