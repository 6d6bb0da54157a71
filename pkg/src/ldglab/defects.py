"""Defect diagnostics: core masks, π₁(RP²) loop classes, cross-section scans."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .field import RegionOutOfDomain, _fsum
from .tensor import bulk_potential, leading_director


class LoopThroughCore(ValueError):
    """The loop meets near-isotropic tensors or is sampled too coarsely."""


def core_mask(fq, eta_core=None):
    eta = fq.mp.eta_core if eta_core is None else eta_core
    return np.asarray(fq.bulk > eta)


@dataclass(frozen=True)
class LoopSpec:
    """Closed polygon of physical points, shape (m, ndim), first == last."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or len(p) < 4:
            raise ValueError("a loop needs at least 4 points")
        if not np.allclose(p[0], p[-1], atol=1e-12):
            raise ValueError("loop is not closed")
        object.__setattr__(self, "points", p)

    def check_spacing(self, grid):
        step = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        if np.any(step > 2 * grid.h * (1 + 1e-9)):
            raise ValueError("consecutive loop points must be within 2h")

    def reversed(self):
        return LoopSpec(self.points[::-1].copy())

    def rotated(self, k):
        body = self.points[:-1]
        body = np.roll(body, -k, axis=0)
        return LoopSpec(np.vstack([body, body[:1]]))

    def compose(self, other):
        """Concatenation; both loops must share the base point."""
        if not np.allclose(self.points[0], other.points[0]):
            raise ValueError("loops must share the base point")
        return LoopSpec(np.vstack([self.points, other.points[1:]]))


def circle_loop(center, radius, h, normal_axis=2, ndim=3, step=None):
    """Circle in the plane normal to a coordinate axis, spaced <= h."""
    step = h if step is None else step
    m = max(8, int(math.ceil(2 * math.pi * radius / step)))
    t = np.linspace(0.0, 2 * math.pi, m + 1)
    t[-1] = 0.0
    c = np.asarray(center, dtype=float)
    pts = np.tile(c, (m + 1, 1))
    plane = [a for a in range(3) if a != normal_axis][:2] if ndim == 3 else [0, 1]
    pts[:, plane[0]] += radius * np.cos(t)
    pts[:, plane[1]] += radius * np.sin(t)
    return LoopSpec(pts)


def sample_values(fq, points):
    """Multilinear interpolation of the 5 coordinates at physical points."""
    g = fq.grid
    idx = ((np.asarray(points, dtype=float) - g.lower) / g.h).T
    hi = np.asarray(g.dims)[:, None] - 1
    if np.any(idx < -1e-9) or np.any(idx > hi + 1e-9):
        raise RegionOutOfDomain("loop leaves the grid")
    return np.stack([ndimage.map_coordinates(fq.values[k], idx, order=1) for k in range(5)])


@dataclass
class LoopVerdict:
    nontrivial: bool
    min_gap: float
    min_dot: float

    @property
    def label(self):
        return "nontrivial" if self.nontrivial else "trivial"


def loop_class(fq, loop, eta_core=None, gap_tol=None, check_spacing=True):
    """Z/2 class of the loop: lift the leading eigenvector with n_{i+1}·n_i >= 0
    and report whether the lift comes back flipped."""
    if check_spacing:
        loop.check_spacing(fq.grid)
    eta = fq.mp.eta_core if eta_core is None else eta_core
    q = sample_values(fq, loop.points)
    f = bulk_potential(q, fq.mp)
    if np.any(f >= eta):
        raise LoopThroughCore("f reaches %.4g >= eta_core %.4g on the loop" % (f.max(), eta))
    n, gap = leading_director(q)
    norm = np.sqrt(np.sum(q * q, axis=0))
    tol = 1e-8 * (1 + norm) if gap_tol is None else gap_tol
    if np.any(gap <= tol):
        raise LoopThroughCore("eigenvalue gap %.3g too small on the loop" % gap.min())
    n = n.T
    dots = np.abs(np.sum(n[1:] * n[:-1], axis=1))
    if dots.min() < 0.5:
        raise LoopThroughCore("director turns too fast between samples (|n·n'| = %.3f)" % dots.min())
    cur = n[0]
    for v in n[1:]:
        v = v if np.dot(v, cur) >= 0 else -v
        cur = v
    # the last sample is the first point again
    sign = np.dot(cur, n[0])
    return LoopVerdict(bool(sign < 0), float(gap.min()), float(dots.min()))


def write_loops_jsonl(path, verdicts):
    with open(path, "w") as fh:
        for i, v in enumerate(verdicts):
            fh.write(json.dumps({"loop": i, "class": v.label, "min_gap": v.min_gap}) + "\n")


@dataclass(frozen=True)
class Cylinder:
    """Cylinder around the line center + t e_axis, |t| range given by t_range."""

    center: tuple
    radius: float
    axis: int
    t_range: tuple

    def mask(self, grid):
        x = grid.coords()
        c = np.asarray(self.center, dtype=float)
        rest = [a for a in range(grid.ndim) if a != self.axis]
        rho2 = sum((x[a] - c[a]) ** 2 for a in rest)
        t = x[self.axis] - c[self.axis]
        lo, hi = self.t_range
        tol = 1e-9 * grid.h
        return (rho2 < self.radius ** 2) & (t >= lo - tol) & (t <= hi + tol)


@dataclass
class SlabHit:
    t: float
    found: bool
    y: tuple | None
    max_f: float


def cross_section_scan(fq, axis, center, radius, t_range, eta_core=None):
    """For each grid plane normal to ``axis`` within t_range, look for a node
    with f > eta_core inside the disk of the given radius."""
    g = fq.grid
    if g.ndim != 3:
        raise ValueError("cross-section scans need a 3D field")
    eta = fq.mp.eta_core if eta_core is None else eta_core
    cyl = Cylinder(tuple(center), radius, axis, tuple(t_range))
    m = cyl.mask(g)
    if np.any(m & g.edge_mask()):
        raise RegionOutOfDomain("cylinder touches the grid edge")
    f = fq.bulk
    c = np.asarray(center, dtype=float)
    out = []
    for k in range(g.dims[axis]):
        sl = [slice(None)] * 3
        sl[axis] = k
        sl = tuple(sl)
        disk = m[sl]
        if not disk.any():
            continue
        fs = np.where(disk, f[sl], -np.inf)
        j = np.unravel_index(np.argmax(fs), fs.shape)
        idx = list(j)
        idx.insert(axis, k)
        mf = float(fs[j])
        t = g.axis(axis)[k] - c[axis]
        found = mf > eta
        out.append(SlabHit(float(t), bool(found), tuple(g.position(idx)) if found else None, mf))
    return out


def write_scan_csv(path, hits):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "found", "y_x", "y_y", "y_z", "max_f"])
        for s in hits:
            y = s.y if s.y is not None else ("", "", "")
            w.writerow(["%.10g" % s.t, int(s.found)] + [v if v == "" else "%.10g" % v for v in y]
                       + ["%.10g" % s.max_f])


def sharpness_lower_bound(fq, cylinder):
    """∫_cyl f / ε² (node quadrature)."""
    m = cylinder.mask(fq.grid)
    return _fsum(fq.bulk[m]) * fq.grid.cell_volume / fq.epsilon ** 2
