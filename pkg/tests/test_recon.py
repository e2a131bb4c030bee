import numpy as np
import pytest

from bwlab.go import DECAYING, GROWING, FrequencyVector, adjoint_coefficients, assemble_go_field, build_amplitudes
from bwlab.raytransform import dtft, hyperplane_frequencies
from bwlab.recon import (CoverageError, DataSource, FrequencySweep, GOInput, OracleSource, PairingOracle,
                         StagedRecovery, StageOrderError, direct_pairing, evaluate_identity, geometry_ok,
                         richardson, verify_boundary_decay)
from bwlab.solver import CoefficientSet
from bwlab.spacetime.grid import Direction, SpaceTimeGrid

from conftest import cos_bump

BOX = [(0.1, 0.9), (0.15, 0.85), (0.15, 0.85)]


def _delta(g, q=1.0, a=0.0, b=0.0, c=(0.0, 0.0)):
    bump = cos_bump((0.5, 0.5, 0.5), (0.38, 0.3, 0.3), 6)
    return CoefficientSet.from_functions(g, A=lambda *y: a * bump(*y), B=lambda *y: b * bump(*y),
                                         C=[lambda *y: c[0] * bump(*y), lambda *y: c[1] * bump(*y)],
                                         q=lambda *y: q * bump(*y))


def test_richardson_is_exact_on_polynomials():
    hs = (0.4, 0.3, 0.2, 0.1)
    vals = np.array([[2.0 / h + 3.0 - h + 5 * h**2] for h in hs])
    c = richardson(hs, vals)
    assert c[-1][0] == pytest.approx(2.0) and c[0][0] == pytest.approx(3.0)
    c = richardson(hs[:3], vals[:3], [0, 1, 2])
    assert set(c) == {0, 1, 2}


def test_laurent_and_quadrature_pairings_agree():
    g = SpaceTimeGrid.uniform(2, nx=26)
    c1 = CoefficientSet.zeros(g)
    c2 = c1 + _delta(g, 1.0, 0.01, 0.05, (0.05, 0.02))
    d = Direction.from_angle(0.7)
    o = PairingOracle(c1, c2, d, "linear", None)
    xis = hyperplane_frequencies(d, [[2.0, -1.0]])
    for h in (0.4, 0.25):
        Pl = o.P(xis, h)[0]
        Pd = direct_pairing(o, xis[0], h)
        assert abs(Pl - Pd) / abs(Pd) < 5e-3


def test_leading_coefficient_is_contracted_transform():
    g = SpaceTimeGrid.uniform(2, nx=26)
    c1 = CoefficientSet.zeros(g)
    delta = _delta(g, 0.0, 0.0, 0.05, (0.05, -0.03))
    d = Direction.from_angle(0.3)
    xis = hyperplane_frequencies(d, [[1.0, 2.0], [-2.0, 0.5]])
    c = PairingOracle(c1, c1 + delta, d).coefficients(xis)
    ref = dtft(delta.B + d.omega[0] * delta.C[0] + d.omega[1] * delta.C[1], g.axes(), xis)
    assert np.max(np.abs(c[-1] - ref)) / np.max(np.abs(ref)) < 1e-10


def test_go_input_matches_assembled_field():
    g = SpaceTimeGrid.uniform(2, nx=21)
    d = Direction.from_angle(0.2)
    a = build_amplitudes(CoefficientSet.zeros(g), d, None, None, GROWING)
    xis = hyperplane_frequencies(d, [[1.0, 2.0]])
    gi = GOInput(a, xis, 0.5)
    U = assemble_go_field(a.with_xi(FrequencyVector(xis[0])).with_h(0.5)).values
    assert np.max(np.abs(gi.full()[..., 0] - U)) / np.max(np.abs(U)) < 1e-12
    nul = GOInput(a, hyperplane_frequencies(d, [[3.0, -4.0]]), 0.5, null_phase=True)
    assert abs(nul.zero[0]) < 1e-10 and abs(nul.shift[0]) > 0


def test_green_identity_defect_small_in_oracle_mode():
    g = SpaceTimeGrid.uniform(2, nx=31)
    c1 = CoefficientSet.zeros(g)
    d = Direction.from_angle(0.2)
    ga = build_amplitudes(c1, d, None, None, GROWING)
    gb = build_amplitudes(adjoint_coefficients(c1), d, None, None, DECAYING)
    xis = hyperplane_frequencies(d, [[1.0, 2.0]])
    ev = evaluate_identity(c1, c1 + _delta(g), ga, gb, xis, 0.5, "oracle", guard=0)[0]
    assert abs(ev.defect[0]) / abs(ev.P[0]) < 0.02
    data = evaluate_identity(c1, c1 + _delta(g), ga, gb, xis, 0.5, "data", guard=0)[0]
    assert data.P is None and data.provenance["Sigma\\G"] == "dropped"
    assert np.allclose(data.B, ev.B)


def test_geometry_and_decay_report_validation():
    g = SpaceTimeGrid.uniform(2, nx=11)
    assert geometry_ok(g, Direction.from_angle(0.0), (1.0, 0.0), 0.1)
    assert not geometry_ok(g, Direction.from_angle(0.3), (1.0, 0.0), 0.1, eps=0.97)
    with pytest.raises(ValueError):
        verify_boundary_decay([(0.4, {"a": 1.0})] * 3)
    rep = verify_boundary_decay([(h, {"a": h, "b": 0.0}) for h in (0.4, 0.3, 0.2, 0.1)], floor=1e-8)
    assert rep["terms"]["a"]["slope"] == pytest.approx(2.0) and rep["terms"]["b"]["at_floor"]


def _small_recovery(delta, g, c1=None, lam=1e-8):
    c1 = CoefficientSet.zeros(g) if c1 is None else c1
    sw = FrequencySweep.disk(6, 10.0, 60, hs=(0.4, 0.3, 0.2))
    return StagedRecovery(OracleSource(c1, c1 + delta, guard=0), sw, BOX, 8, delta, lam)


def test_stage_order_enforced():
    g = SpaceTimeGrid.uniform(2, nx=21)
    sr = _small_recovery(_delta(g), g)
    with pytest.raises(StageOrderError):
        sr.recover_q()
    with pytest.raises(StageOrderError):
        sr.recover_A()
    with pytest.raises(StageOrderError):
        sr.declare_equal("A")
    sr.declare_equal("BC")
    sr.declare_equal("A")
    assert sr.done == {"BC": "declared", "A": "declared"}


def test_data_source_refuses_known_part():
    g = SpaceTimeGrid.uniform(2, nx=11)
    src = DataSource(CoefficientSet.zeros(g), CoefficientSet.zeros(g))
    with pytest.raises(StageOrderError):
        src.known_part(Direction.from_angle(0.0), None, None, np.zeros((1, 3)), _delta(g))


def test_coverage_error_for_sparse_sweeps():
    g = SpaceTimeGrid.uniform(2, nx=21)
    sw = FrequencySweep.disk(2, 5.0, 4)
    sr = StagedRecovery(OracleSource(CoefficientSet.zeros(g), _delta(g), guard=0), sw, BOX, 8)
    sr.declare_equal("BC")
    sr.declare_equal("A")
    with pytest.raises(CoverageError):
        sr.recover_q()


def test_recovery_is_linear_in_the_difference():
    g = SpaceTimeGrid.uniform(2, nx=21)
    d1 = _delta(g, 1.0)
    d2 = CoefficientSet.from_functions(g, q=cos_bump((0.45, 0.55, 0.45), (0.3, 0.25, 0.25), 6))
    out = []
    for delta in (d1, d2, d1 + d2):
        # moderate regularisation keeps rounding in the normal equations near machine precision
        sr = _small_recovery(delta, g, lam=1e-4)
        sr.declare_equal("BC")
        sr.declare_equal("A")
        out.append(sr.recover_q().fields["q"])
    scale = np.max(np.abs(out[2]))
    assert np.max(np.abs(out[0] + out[1] - out[2])) <= 1e-10 * scale
