"""QF1 binary field files and VTK legacy export.

QF1 layout (little-endian):
    b"QFLD", u32 version (=1), u32 ndim, u32 dims[ndim], f64 spacing,
    f64 origin[ndim], f64 epsilon, f64 a, f64 b, f64 c,
    then 5 f64 coordinates per node with x varying fastest.

The boundary mask is not stored; a file read back has its grid edge fixed.
"""
from __future__ import annotations

import struct

import numpy as np

from .field import FieldQ, GridSpec
from .tensor import MaterialParams, from_matrix, to_matrix

MAGIC = b"QFLD"
VERSION = 1


class QF1FormatError(ValueError):
    pass


def write_qf1(path, fq):
    g = fq.grid
    head = [MAGIC, struct.pack("<II", VERSION, g.ndim),
            struct.pack("<%dI" % g.ndim, *g.dims),
            struct.pack("<d", g.h),
            struct.pack("<%dd" % g.ndim, *g.origin),
            struct.pack("<4d", fq.epsilon, fq.mp.a, fq.mp.b, fq.mp.c)]
    # (5, nx, ny[, nz]) -> ([nz,] ny, nx, 5): C order then runs x fastest
    payload = np.ascontiguousarray(np.asarray(fq.values).T, dtype="<f8")
    with open(path, "wb") as fh:
        for part in head:
            fh.write(part)
        fh.write(payload.tobytes())


def _take(buf, pos, fmt):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise QF1FormatError("truncated header")
    return struct.unpack_from(fmt, buf, pos), pos + size


def read_qf1(path, eta_core=None):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise QF1FormatError("%s: bad magic %r" % (path, buf[:4]))
    (version, ndim), pos = _take(buf, 4, "<II")
    if version != VERSION:
        raise QF1FormatError("%s: unsupported version %d" % (path, version))
    if ndim not in (2, 3):
        raise QF1FormatError("%s: ndim must be 2 or 3, got %d" % (path, ndim))
    dims, pos = _take(buf, pos, "<%dI" % ndim)
    (h,), pos = _take(buf, pos, "<d")
    origin, pos = _take(buf, pos, "<%dd" % ndim)
    (eps, a, b, c), pos = _take(buf, pos, "<4d")
    n = 5 * int(np.prod(dims))
    if len(buf) - pos != 8 * n:
        raise QF1FormatError("%s: payload has %d bytes, expected %d" % (path, len(buf) - pos, 8 * n))
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=pos)
    values = data.reshape(tuple(reversed(dims)) + (5,)).T.astype(float)
    _check_sample(values, path)
    grid = GridSpec(tuple(int(d) for d in dims), float(h), tuple(origin))
    mp = MaterialParams(a, b, c, eta_core)
    return FieldQ(grid, values, grid.edge_mask(), float(eps), mp)


def _check_sample(values, path, count=64):
    flat = values.reshape(5, -1)
    idx = np.linspace(0, flat.shape[1] - 1, min(count, flat.shape[1])).astype(int)
    sample = flat[:, idx]
    if not np.all(np.isfinite(sample)):
        raise QF1FormatError("%s: non-finite payload" % path)
    back = from_matrix(to_matrix(sample))
    if not np.allclose(back, sample, rtol=1e-12, atol=1e-12):
        raise QF1FormatError("%s: payload fails the S0 round trip" % path)


def write_vtk(path, fq, title="ldglab field"):
    """Legacy VTK structured points with scalars f(Q) and |grad Q|."""
    g = fq.grid
    dims = list(g.dims) + [1] * (3 - g.ndim)
    origin = list(g.origin) + [0.0] * (3 - g.ndim)
    npts = int(np.prod(g.dims))
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS %d %d %d" % tuple(dims),
             "ORIGIN %.17g %.17g %.17g" % tuple(origin),
             "SPACING %.17g %.17g %.17g" % (g.h, g.h, g.h),
             "POINT_DATA %d" % npts]
    for name, arr in (("bulk", fq.bulk), ("grad_norm", np.sqrt(fq.grad_sq))):
        lines.append("SCALARS %s double 1" % name)
        lines.append("LOOKUP_TABLE default")
        lines.extend("%.10g" % v for v in np.asarray(arr).T.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
