"""OBSS field snapshots: a minimal little-endian binary container.

Layout: b"OBSS", u32 version (=1), u32 n x3, f64 box_side, u32 component
count, then one f64 array of n^3 physical samples per component, x fastest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import PeriodicGrid, ScalarField

MAGIC = b"OBSS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIdI")


class SnapshotFormatError(ValueError):
    pass


def _components(fields) -> list[np.ndarray]:
    out = []
    for f in fields:
        vals = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)
        if vals.ndim == 4:
            out.extend(vals)
        else:
            out.append(vals)
    return out


def write_obss(path, grid: PeriodicGrid, fields) -> Path:
    """Write scalar/vector fields (or raw physical arrays) in order."""
    comps = _components(fields)
    n = grid.n
    for c in comps:
        if c.shape != (n, n, n):
            raise SnapshotFormatError(f"component shape {c.shape} does not match grid {n}^3")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, n, n, float(grid.box_side), len(comps)))
        for c in comps:
            fh.write(np.asarray(c, dtype="<f8").tobytes(order="F"))
    return path


def read_obss(path) -> tuple[PeriodicGrid, np.ndarray]:
    """Return the grid and an array of shape (components, n, n, n)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("file shorter than the OBSS header")
    magic, version, nx, ny, nz, side, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported OBSS version {version}")
    if not nx == ny == nz:
        raise SnapshotFormatError("only cubic grids are supported")
    body = data[_HEADER.size :]
    want = count * nx * ny * nz * 8
    if len(body) != want:
        raise SnapshotFormatError(f"payload has {len(body)} bytes, expected {want}")
    flat = np.frombuffer(body, dtype="<f8").reshape(count, nx * ny * nz)
    arrays = np.stack([c.reshape((nx, ny, nz), order="F") for c in flat]) if count else np.empty((0, nx, ny, nz))
    return PeriodicGrid(side, nx), arrays
