"""Grids, fields, difference operators, quadrature and file formats."""
from .fields import SCALAR, VECTOR, FieldSample, vector_field
from .grid import FINAL, INITIAL, INTERIOR, LATERAL, Direction, Face, SpaceTimeGrid, full_circle, null_projection
from .io import read_field, write_csv_slice, write_field
from .ops import apply_dalembertian, directional_derivative_T, divergence, spatial_gradient, time_derivative
from .quadrature import integrate_face, integrate_faces, integrate_Omega, integrate_Q, quadrature, split_faces
from .sobolev import semiclassical_norm

__all__ = [
    "SCALAR", "VECTOR", "FieldSample", "vector_field", "Direction", "Face", "SpaceTimeGrid", "full_circle",
    "null_projection", "INTERIOR", "LATERAL", "INITIAL", "FINAL", "read_field", "write_field", "write_csv_slice",
    "apply_dalembertian", "directional_derivative_T", "divergence", "spatial_gradient", "time_derivative",
    "integrate_face", "integrate_faces", "integrate_Omega", "integrate_Q", "quadrature", "split_faces",
    "semiclassical_norm",
]
