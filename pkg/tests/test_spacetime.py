import numpy as np
import pytest

from bwlab.spacetime.fields import SCALAR, VECTOR, FieldSample, vector_field
from bwlab.spacetime.grid import FINAL, INITIAL, INTERIOR, LATERAL, Direction, Face, SpaceTimeGrid, full_circle
from bwlab.spacetime.io import decode, encode, read_field, write_csv_slice, write_field
from bwlab.spacetime.ops import apply_dalembertian, directional_derivative_T
from bwlab.spacetime.quadrature import quadrature, split_faces
from bwlab.spacetime.sobolev import semiclassical_norm


def test_grid_spacing_and_cfl():
    g = SpaceTimeGrid.uniform(2, nx=21)
    assert g.shape == (g.nt, 21, 21)
    assert g.dx == pytest.approx((0.05, 0.05))
    assert g.cfl < 0.5 + 1e-12
    with pytest.raises(ValueError):
        SpaceTimeGrid(1.0, ((0, 1),), 2, (5,))
    with pytest.raises(ValueError):
        SpaceTimeGrid(1.0, ((1, 0),), 5, (5,))


def test_classification_partitions_nodes():
    g = SpaceTimeGrid.uniform(2, nx=7)
    c = g.classify()
    counts = {k: int(np.sum(c == k)) for k in (INTERIOR, LATERAL, INITIAL, FINAL)}
    assert sum(counts.values()) == np.prod(g.shape)
    assert counts[INITIAL] == counts[FINAL] == 49
    assert counts[INTERIOR] == (g.nt - 2) * 25


def test_directions_and_faces():
    d = Direction.from_angle(0.3)
    assert np.linalg.norm(d.vec) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Direction((1.0, 1.0))
    nb = d.neighbourhood(5)
    assert len(nb) == 5
    assert all(np.arccos(np.clip(x.vec @ d.vec, -1, 1)) <= d.epsilon + 1e-12 for x in nb)
    assert len(full_circle(8)) == 8
    assert Face(0, 1).dot((0.6, 0.8)) == pytest.approx(0.6)
    g = SpaceTimeGrid.uniform(2, nx=5)
    G, rest = split_faces(g, (1.0, 0.0), 0.1)
    assert Face(0, 1) in rest and Face(0, -1) in G and len(G) + len(rest) == 4


def test_field_sample_shapes_and_immutability():
    g = SpaceTimeGrid.uniform(1, nx=5)
    f = FieldSample.from_function(g, lambda t, x: t + x)
    assert f.rank == SCALAR and not f.is_complex
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        FieldSample(g, np.zeros((2, 2)))
    v = vector_field(g, [f, f])
    assert v.rank == VECTOR and v.values.shape == (2,) + g.shape


def test_bwlab1_round_trip(tmp_path):
    g = SpaceTimeGrid(1.0, ((0, 2), (0, 1)), 5, (4, 3), t0=-0.25)
    rng = np.random.default_rng(1)
    f = FieldSample(g, rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))
    back = decode(encode(f))
    assert back.grid.nt == g.nt and back.grid.nx == g.nx
    assert back.grid.T == pytest.approx(g.T) and back.grid.t0 == g.t0
    assert np.array_equal(back.values, f.values)
    p = write_field(tmp_path / "f.bwlab1", f)
    assert np.array_equal(read_field(p).values, f.values)
    assert encode(f) == encode(back)
    vec = FieldSample(g, rng.normal(size=(3,) + g.shape), VECTOR)
    assert np.array_equal(decode(encode(vec)).values, vec.values)
    with pytest.raises(ValueError):
        decode(b"XXXX" + encode(f)[4:])


def test_csv_slice(tmp_path):
    g = SpaceTimeGrid.uniform(2, nx=4)
    f = FieldSample.from_function(g, lambda t, x, y: x + 2 * y)
    p = write_csv_slice(tmp_path / "s.csv", f, {0: 0})
    lines = p.read_text().splitlines()
    assert lines[0] == "x1,x2,re,im" and len(lines) == 17


def test_quadrature_exact_for_polynomials():
    g = SpaceTimeGrid.uniform(2, nx=11)
    one = FieldSample(g, np.ones(g.shape))
    assert quadrature(one, "Q") == pytest.approx(1.0)
    assert quadrature(one, "Omega") == pytest.approx(1.0)
    assert quadrature(one, "Sigma") == pytest.approx(4.0)
    lin = FieldSample.from_function(g, lambda t, x, y: t + x)
    assert quadrature(lin, "Q") == pytest.approx(1.0)
    assert quadrature(one, "G", omega0=(1.0, 0.0)) + quadrature(one, "Sigma\\G", omega0=(1.0, 0.0)) \
        == pytest.approx(4.0)


def test_dalembertian_and_transport_of_plane_wave():
    g = SpaceTimeGrid.uniform(1, nx=201, cfl=0.5)
    d = Direction((1.0,))
    f = FieldSample.from_function(g, lambda t, x: np.sin(t + x))
    # sin(t + x) is annihilated by T = d_t - d_x and by Box
    T = directional_derivative_T(f, d).values
    B = apply_dalembertian(f).values
    assert np.nanmax(np.abs(T)) < 1e-3 and np.nanmax(np.abs(B)) < 1e-3


def test_semiclassical_norms():
    g = SpaceTimeGrid.uniform(1, nx=65)
    f = FieldSample.from_function(g, lambda t, x: np.sin(np.pi * t) ** 4 * np.sin(np.pi * x) ** 4)
    n0 = semiclassical_norm(f, 0, 0.1)
    n1 = semiclassical_norm(f, 1, 0.1)
    nm = semiclassical_norm(f, -1, 0.1)
    assert nm < n0 < n1
    assert semiclassical_norm(f, 0, 0.1) == pytest.approx(semiclassical_norm(f, 0, 0.3))
    with pytest.raises(ValueError):
        semiclassical_norm(f, 0, 0.0)
