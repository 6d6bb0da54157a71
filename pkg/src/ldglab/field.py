"""Q-tensor fields on uniform grids: derivatives, energies, the weighted
monotonicity quantity and boundary-data generators.

Values are stored component-first, ``values.shape == (5, *dims)``.  A 2D
field is read as a cross-section of a field invariant along the third axis,
so its energies are per unit length; ``FieldQ.per_unit_length`` flags it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property

import numpy as np
from scipy import ndimage

from .tensor import MaterialParams, bulk_gradient, bulk_potential, uniaxial


class RegionOutOfDomain(ValueError):
    pass


class SupportExceedsDomain(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    dims: tuple
    h: float
    origin: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) not in (2, 3):
            raise ValueError("grids are 2D or 3D")
        if len(origin) != len(dims):
            raise ValueError("origin must have one entry per axis")
        if min(dims) < 4:
            raise ValueError("need at least 4 nodes per axis")
        if not self.h > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def centered(cls, dims, h):
        """Grid whose node cloud is centered on the origin."""
        dims = tuple(int(d) for d in dims)
        return cls(dims, h, tuple(-(d - 1) * h / 2.0 for d in dims))

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def lower(self):
        return np.asarray(self.origin)

    @property
    def upper(self):
        return self.lower + (np.asarray(self.dims) - 1) * self.h

    @property
    def cell_volume(self):
        return self.h ** self.ndim

    def axis(self, i):
        return self.origin[i] + self.h * np.arange(self.dims[i])

    def coords(self):
        """Node coordinates, shape (ndim, *dims)."""
        return np.stack(np.meshgrid(*[self.axis(i) for i in range(self.ndim)], indexing="ij"))

    def to_index(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / self.h

    def position(self, idx):
        return self.lower + self.h * np.asarray(idx, dtype=float)

    def distance_to_edge(self, x):
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def edge_mask(self):
        m = np.zeros(self.dims, dtype=bool)
        for ax in range(self.ndim):
            sl = [slice(None)] * self.ndim
            sl[ax] = 0
            m[tuple(sl)] = True
            sl[ax] = -1
            m[tuple(sl)] = True
        return m

    def node_distance_to_edge(self):
        """Per-node distance to the bounding box of the grid."""
        d = None
        for ax in range(self.ndim):
            i = np.arange(self.dims[ax])
            di = np.minimum(i, self.dims[ax] - 1 - i) * self.h
            shape = [1] * self.ndim
            shape[ax] = -1
            di = di.reshape(shape)
            d = di if d is None else np.minimum(d, di)
        return np.broadcast_to(d, self.dims)


# --- regions -------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def mask(self, grid):
        c = np.asarray(self.center, dtype=float)
        if grid.distance_to_edge(c) < self.radius - 1e-12 * grid.h:
            raise RegionOutOfDomain("ball of radius %g at %s leaves the grid" % (self.radius, c))
        return _ball_nodes(grid, c, self.radius)


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def mask(self, grid):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        tol = 1e-9 * grid.h
        if np.any(lo < grid.lower - tol) or np.any(hi > grid.upper + tol):
            raise RegionOutOfDomain("box %s-%s leaves the grid" % (lo, hi))
        x = grid.coords()
        inside = np.ones(grid.dims, dtype=bool)
        for ax in range(grid.ndim):
            inside &= (x[ax] >= lo[ax] - tol) & (x[ax] <= hi[ax] + tol)
        return inside


def _diff(a, h, axis):
    """Second-order derivative along axis, written in differences so equal neighbours give exactly 0."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
    out[0] = (4 * (a[1] - a[0]) - (a[2] - a[0])) / (2 * h)
    out[-1] = ((a[-3] - a[-1]) - 4 * (a[-2] - a[-1])) / (2 * h)
    return np.moveaxis(out, 0, axis)


def _ball_nodes(grid, center, radius):
    """Nodes with |y - center| < radius, computed on the bounding sub-block only."""
    out = np.zeros(grid.dims, dtype=bool)
    idx = grid.to_index(center)
    rr = radius / grid.h
    lo = np.maximum(np.floor(idx - rr).astype(int), 0)
    hi = np.minimum(np.ceil(idx + rr).astype(int) + 1, grid.dims)
    axes = [np.arange(lo[a], hi[a]) - idx[a] for a in range(grid.ndim)]
    d2 = sum(np.meshgrid(*[a * a for a in axes], indexing="ij"))
    out[tuple(slice(lo[a], hi[a]) for a in range(grid.ndim))] = d2 < rr * rr
    return out


def region_mask(grid, region):
    if region is None:
        return np.ones(grid.dims, dtype=bool)
    if isinstance(region, np.ndarray):
        if region.shape != tuple(grid.dims):
            raise RegionOutOfDomain("mask shape %s does not match grid %s" % (region.shape, grid.dims))
        return region.astype(bool)
    return region.mask(grid)


# --- the field -----------------------------------------------------------------

@dataclass(frozen=True)
class FieldQ:
    """Immutable snapshot of a Q-tensor field with Dirichlet mask and ε.

    Derived arrays (gradients, densities) are computed lazily and cached.
    """

    grid: GridSpec
    values: np.ndarray
    boundary_mask: np.ndarray
    epsilon: float
    mp: MaterialParams = dc_field(default_factory=MaterialParams)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (5,) + tuple(self.grid.dims):
            raise ValueError("values must have shape (5, *dims), got %s" % (v.shape,))
        m = np.asarray(self.boundary_mask, dtype=bool)
        if m.shape != tuple(self.grid.dims):
            raise ValueError("boundary mask shape mismatch")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "boundary_mask", m)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def per_unit_length(self):
        return self.grid.ndim == 2

    def with_values(self, values, epsilon=None):
        return replace(self, values=np.array(values, dtype=float),
                       epsilon=self.epsilon if epsilon is None else epsilon)

    @cached_property
    def gradient(self):
        """Central differences (one-sided second order at the edges), shape (ndim, 5, *dims)."""
        return np.stack([_diff(self.values, self.grid.h, a) for a in range(1, self.grid.ndim + 1)])

    @cached_property
    def grad_sq(self):
        """|∇Q|² per node."""
        return np.einsum("ak...,ak...->...", self.gradient, self.gradient)

    @cached_property
    def hessian_norm(self):
        """|D²Q| per node from repeated central differences."""
        nd = self.grid.ndim
        acc = np.zeros(self.grid.dims)
        for a in range(nd):
            for b in range(nd):
                acc += np.sum(_diff(self.gradient[a], self.grid.h, b + 1) ** 2, axis=0)
        return np.sqrt(acc)

    @cached_property
    def bulk(self):
        """f(Q) per node."""
        return bulk_potential(self.values, self.mp)

    @cached_property
    def density(self):
        """Energy density e_ε = ½|∇Q|² + f/ε² per node."""
        return 0.5 * self.grad_sq + self.bulk / self.epsilon ** 2


def _fsum(a):
    # correctly rounded, order independent
    return math.fsum(np.ravel(a).tolist())


@dataclass(frozen=True)
class Energy:
    dirichlet: float
    bulk: float
    total: float


def energy(fq, region=None):
    """E_ε over a region (None = whole grid); node-sampled quadrature."""
    m = region_mask(fq.grid, region)
    dv = fq.grid.cell_volume
    d = _fsum(0.5 * fq.grad_sq[m]) * dv
    b = _fsum(fq.bulk[m]) * dv / fq.epsilon ** 2
    return Energy(d, b, d + b)


def laplacian(values, h):
    """Standard (2n+1)-point Laplacian at nodes one away from the grid edge; zero on the edge."""
    nd = values.ndim - 1
    out = np.zeros_like(values)
    inner = (slice(None),) + (slice(1, -1),) * nd
    acc = -2.0 * nd * values[inner]
    for ax in range(1, nd + 1):
        for shift in (0, 2):
            sl = [slice(None)] + [slice(1, -1)] * nd
            sl[ax] = slice(shift, values.shape[ax] - 2 + shift)
            acc = acc + values[tuple(sl)]
    out[inner] = acc / (h * h)
    return out


def el_residual(fq):
    """Discrete residual of -ε²ΔQ + Df(Q) at free nodes.

    Returns (sup-norm, per-node |residual| array with zeros on fixed nodes).
    """
    if not np.all(fq.boundary_mask[fq.grid.edge_mask()]):
        raise ValueError("grid edge nodes must be fixed")
    r = -fq.epsilon ** 2 * laplacian(fq.values, fq.grid.h) + bulk_gradient(fq.values, fq.mp)
    mag = np.sqrt(np.sum(r * r, axis=0))
    mag[fq.boundary_mask] = 0.0
    return float(mag.max()), mag


def directional_energy(fq, v, x, r):
    """(1/r) Σ_{B_r(x)} |v·∇Q|² h^n.  In 2D only the in-plane part of v acts."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    m = Ball(tuple(x), r).mask(fq.grid)
    nd = fq.grid.ndim
    dv = np.tensordot(v[:nd], fq.gradient[:, :, m], axes=(0, 0))
    return _fsum(np.sum(dv * dv, axis=0)) * fq.grid.cell_volume / r


def lp_gradient_norm(fq, p, region=None):
    if p < 1:
        raise ValueError("p must be >= 1")
    m = region_mask(fq.grid, region)
    return (_fsum(fq.grad_sq[m] ** (0.5 * p)) * fq.grid.cell_volume) ** (1.0 / p)


# --- cutoff and the monotonicity quantity --------------------------------------

@dataclass(frozen=True)
class PhiCutoff:
    """Piecewise cutoff: 60 - 1.5t on [0, 8], cubic Hermite down to 0 on [8, 10].

    C¹ only; the monotonicity identity uses φ and φ' and nothing more.
    """

    t_linear: float = 8.0
    t_support: float = 10.0
    value0: float = 60.0
    slope: float = -1.5

    def _cubic(self):
        w = self.t_support - self.t_linear
        y0 = self.value0 + self.slope * self.t_linear
        return w, y0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        w, y0 = self._cubic()
        u = np.clip((t - self.t_linear) / w, 0.0, 1.0)
        cubic = y0 * (2 * u**3 - 3 * u**2 + 1) + w * self.slope * (u**3 - 2 * u**2 + u)
        out = np.where(t <= self.t_linear, self.value0 + self.slope * t, cubic)
        return np.where(t >= self.t_support, 0.0, out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        w, y0 = self._cubic()
        u = np.clip((t - self.t_linear) / w, 0.0, 1.0)
        dcubic = (y0 * (6 * u**2 - 6 * u) + w * self.slope * (3 * u**2 - 4 * u + 1)) / w
        out = np.where(t <= self.t_linear, self.slope, dcubic)
        return np.where(t >= self.t_support, 0.0, out)

    def line_integral(self, s):
        """Φ(s) = ∫_R φ(s + u²) du, exact (Gauss-Legendre on polynomial pieces).

        Weight for fields invariant along the third axis.
        """
        s = np.asarray(s, dtype=float)
        xg, wg = np.polynomial.legendre.leggauss(8)
        total = np.zeros_like(s)
        lo = np.zeros_like(s)
        for brk in (self.t_linear, self.t_support):
            hi = np.sqrt(np.clip(brk - s, 0.0, None))
            hi = np.maximum(hi, lo)
            mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
            u = mid[..., None] + half[..., None] * xg
            total += half * np.sum(wg * self(s[..., None] + u * u), axis=-1)
            lo = hi
        return 2.0 * total


def make_phi():
    return PhiCutoff()


def theta(fq, x, r, phi=None, refine_below=4.0):
    """Θ_r(Q, x) = (1/r) ∫ e_ε(Q) φ(|y-x|²/r²) dy.

    Node-sampled Riemann sum.  For r < refine_below·h the sum runs over a
    lattice refined by m = ceil(refine_below·h/r) (aligned with the nodes) with
    multilinearly interpolated density.  2D fields use the z-integrated weight.
    """
    phi = phi or make_phi()
    g = fq.grid
    x = np.asarray(x, dtype=float)
    reach = math.sqrt(phi.t_support) * r
    if g.distance_to_edge(x) < reach:
        raise SupportExceedsDomain("φ support radius %.4g exceeds distance %.4g to the edge"
                                   % (reach, g.distance_to_edge(x)))
    m = max(1, math.ceil(refine_below * g.h / r - 1e-12))
    idx = g.to_index(x)
    span = reach / g.h
    lo = np.floor((idx - span) * m).astype(int)
    hi = np.ceil((idx + span) * m).astype(int)
    axes = [np.arange(lo[a], hi[a] + 1) / m for a in range(g.ndim)]
    pts = np.meshgrid(*axes, indexing="ij")
    d2 = sum((pts[a] - idx[a]) ** 2 for a in range(g.ndim)) * g.h * g.h / (r * r)
    keep = d2 < phi.t_support
    if m == 1:
        e = fq.density[tuple(np.rint(p[keep]).astype(int) for p in pts)]
    else:
        e = ndimage.map_coordinates(fq.density, [p[keep] for p in pts], order=1, mode="nearest")
    dv = (g.h / m) ** g.ndim
    if g.ndim == 3:
        w = phi(d2[keep])
        return _fsum(e * w) * dv / r
    w = phi.line_integral(d2[keep])
    return _fsum(e * w) * dv


# --- boundary data ---------------------------------------------------------------

def _ramp(rho, eps):
    return rho / np.sqrt(rho * rho + eps * eps)


def constant_bc(grid, n, epsilon, mp=None):
    mp = mp or MaterialParams()
    q = uniaxial(np.asarray(n, dtype=float), mp.s_star)
    vals = np.broadcast_to(q.reshape((5,) + (1,) * grid.ndim), (5,) + grid.dims).copy()
    return FieldQ(grid, vals, grid.edge_mask(), epsilon, mp)


def _check_clear(grid, mask, dist, what):
    if np.any(dist[mask] < 1e-9 * grid.h):
        raise DegenerateGeometry("%s passes through a boundary node" % what)


def hedgehog_bc(grid, epsilon, center=None, mp=None, radius=None):
    """Radial hedgehog s_*(x̂⊗x̂ - I/3) on the fixed nodes.

    Fixed nodes are the grid edge, or every node with |x - center| >= radius
    when a ball domain is requested.  Free nodes start from the same formula
    with amplitude ramped to zero at the center over a length ε.
    """
    mp = mp or MaterialParams()
    if grid.ndim != 3:
        raise ValueError("hedgehog needs a 3D grid")
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    x = grid.coords() - c.reshape(3, 1, 1, 1)
    rho = np.sqrt(np.sum(x * x, axis=0))
    mask = grid.edge_mask()
    if radius is not None:
        if grid.distance_to_edge(c) <= radius:
            raise DegenerateGeometry("ball domain does not fit the grid")
        mask = mask | (rho >= radius)
    _check_clear(grid, mask, rho, "hedgehog center")
    safe = np.where(rho > 0, rho, 1.0)
    n = np.where(rho > 0, x / safe, np.array([0.0, 0.0, 1.0]).reshape(3, 1, 1, 1))
    q = uniaxial(n, mp.s_star)
    vals = np.where(mask, q, q * _ramp(rho, epsilon))
    return FieldQ(grid, vals, mask, epsilon, mp)


def disclination_bc(grid, epsilon, winding=0.5, center=None, mp=None, ramp=True):
    """Straight line defect along the third axis through ``center``.

    The director n = (cos wθ, sin wθ, 0) winds by 2πw around the line.  On 2D
    grids the line is normal to the plane.
    """
    mp = mp or MaterialParams()
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)[:2]
    x = grid.coords()
    dx = x[0] - c[0]
    dy = x[1] - c[1]
    rho = np.hypot(dx, dy)
    mask = grid.edge_mask()
    _check_clear(grid, mask, rho, "disclination axis")
    th = np.arctan2(dy, dx)
    n = np.stack([np.cos(winding * th), np.sin(winding * th), np.zeros_like(th)])
    q = uniaxial(n, mp.s_star)
    vals = np.where(mask, q, q * _ramp(rho, epsilon)) if ramp else q
    return FieldQ(grid, vals, mask, epsilon, mp)
