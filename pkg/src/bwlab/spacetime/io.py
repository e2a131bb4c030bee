"""BWLAB1 binary field files and CSV slice export.

Layout (all little-endian)::

    magic     6 bytes   b"BWLAB1"
    scalar    uint8     0 = real float64, 1 = complex (interleaved re, im)
    rank      uint8     0 = scalar, 1 = space-time vector
    n         uint16    spatial dimension
    nt        uint32
    nx[n]     uint32
    t0, dt    float64
    x0[n]     float64   lower box corner
    dx[n]     float64
    ncomp     uint32    1 for scalars, 1+n for vectors
    data      float64   time-major: t, x1..xn, component, (re, im)
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .fields import SCALAR, VECTOR, FieldSample
from .grid import SpaceTimeGrid

MAGIC = b"BWLAB1"


def encode(field: FieldSample) -> bytes:
    g = field.grid
    cplx = field.is_complex
    rank = 0 if field.rank == SCALAR else 1
    ncomp = 1 if rank == 0 else g.n + 1
    head = MAGIC + struct.pack("<BBH", int(cplx), rank, g.n)
    head += struct.pack(f"<I{g.n}I", g.nt, *g.nx)
    head += struct.pack("<dd", g.t0, g.dt)
    head += struct.pack(f"<{g.n}d", *(a for a, _ in g.omega_box))
    head += struct.pack(f"<{g.n}d", *g.dx)
    head += struct.pack("<I", ncomp)
    vals = field.values if rank == 0 else np.moveaxis(field.values, 0, -1)
    vals = np.ascontiguousarray(vals)
    if cplx:
        vals = np.stack([vals.real, vals.imag], axis=-1)
    return head + np.ascontiguousarray(vals, dtype="<f8").tobytes()


def decode(buf: bytes) -> FieldSample:
    if buf[:6] != MAGIC:
        raise ValueError("not a BWLAB1 file")
    off = 6
    cplx, rank, n = struct.unpack_from("<BBH", buf, off)
    off += 4
    nt, *nx = struct.unpack_from(f"<I{n}I", buf, off)
    off += 4 * (n + 1)
    t0, dt = struct.unpack_from("<dd", buf, off)
    off += 16
    x0 = struct.unpack_from(f"<{n}d", buf, off)
    off += 8 * n
    dx = struct.unpack_from(f"<{n}d", buf, off)
    off += 8 * n
    (ncomp,) = struct.unpack_from("<I", buf, off)
    off += 4
    box = tuple((a, a + (m - 1) * d) for a, m, d in zip(x0, nx, dx))
    grid = SpaceTimeGrid(t0 + (nt - 1) * dt, box, nt, tuple(nx), t0=t0)
    shape = (nt, *nx) + ((ncomp,) if rank else ()) + ((2,) if cplx else ())
    data = np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).astype(float)
    if cplx:
        data = data[..., 0] + 1j * data[..., 1]
    if rank:
        data = np.moveaxis(data, -1, 0)
    return FieldSample(grid, data, VECTOR if rank else SCALAR)


def write_field(path, field: FieldSample) -> Path:
    path = Path(path)
    path.write_bytes(encode(field))
    return path


def read_field(path) -> FieldSample:
    return decode(Path(path).read_bytes())


def write_csv_slice(path, field: FieldSample, fixed: dict) -> Path:
    """Write a 1D or 2D slice as CSV; ``fixed`` maps axis index (0 = t) to node index."""
    if field.rank != SCALAR:
        raise ValueError("CSV export handles scalar fields")
    g = field.grid
    idx = [fixed.get(k, slice(None)) for k in range(g.n + 1)]
    free = [k for k in range(g.n + 1) if k not in fixed]
    if len(free) not in (1, 2):
        raise ValueError("CSV export writes 1D or 2D slices")
    vals = field.values[tuple(idx)]
    axes = g.axes()
    names = ["t"] + [f"x{i + 1}" for i in range(g.n)]
    coords = np.meshgrid(*[axes[k] for k in free], indexing="ij")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([names[k] for k in free] + ["re", "im"])
        for pos in np.ndindex(vals.shape):
            v = complex(vals[pos])
            w.writerow([repr(float(c[pos])) for c in coords] + [repr(v.real), repr(v.imag)])
    return path
