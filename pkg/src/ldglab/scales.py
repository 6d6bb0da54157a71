"""Regular scales, bad sets, coverings and the quantitative audits built on them.

Radius ladders are the multiples of h up to the distance from the node to the
grid edge; sup-defined scales report the largest passing rung.  Point queries
snap x to the nearest node.

For 2D fields (cross-sections of fields invariant along the third axis) every
ball integral is the integral over a 3D ball, i.e. node values are weighted by
the chord length 2 sqrt(r² - ρ²).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from importlib import resources

import numpy as np
from scipy import fft, ndimage, optimize
from scipy.spatial import cKDTree

from .field import RegionOutOfDomain, _fsum, directional_energy, make_phi, theta


class IntervalTooNarrow(ValueError):
    pass


class HypothesisViolated(ValueError):
    pass


class GoodRadiusViolation(AssertionError):
    pass


@dataclass(frozen=True)
class ScaleParams:
    Lambda: float
    eta_clear: float
    sigma: float = 0.5
    theta: float = 0.125
    beta: float = 0.5

    def __post_init__(self):
        if not (self.Lambda > 0 and self.eta_clear > 0):
            raise ValueError("Lambda and eta_clear must be positive")
        if not 0 < self.sigma <= 0.5:
            raise ValueError("sigma must lie in (0, 1/2]")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.beta <= 0.5:
            raise ValueError("beta must lie in (0, 1/2]")


def load_calibration(path=None):
    """Frozen calibration constants (JSON).  Defaults to the packaged file."""
    if path is None:
        text = resources.files("ldglab").joinpath("calibration.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def calibrated_params(cal=None):
    cal = cal or load_calibration()
    s = cal["scales"]
    return ScaleParams(s["Lambda"], s["eta_clear"], s["sigma"], s["theta"], s["beta"])


# --- balls ----------------------------------------------------------------------

def _node(grid, x):
    idx = np.rint(grid.to_index(x)).astype(int)
    if np.any(idx < 0) or np.any(idx >= np.asarray(grid.dims)):
        raise RegionOutOfDomain("point %s is off the grid" % (x,))
    return tuple(int(i) for i in idx)


def _cap_rungs(grid, node):
    """Largest ladder index k with k*h <= distance from node to the edge."""
    return int(min(min(i, d - 1 - i) for i, d in zip(node, grid.dims)))


def ball_offsets(grid, r):
    """Integer offsets o with |o| h < r, and their quadrature weights."""
    R = int(math.ceil(r / grid.h))
    ax = np.arange(-R, R + 1)
    o = np.stack(np.meshgrid(*([ax] * grid.ndim), indexing="ij")).reshape(grid.ndim, -1).T
    rho2 = np.sum(o * o, axis=1) * grid.h ** 2
    keep = rho2 < r * r * (1 - 1e-12)
    o, rho2 = o[keep], rho2[keep]
    w = np.full(len(o), grid.cell_volume)
    if grid.ndim == 2:
        w = w * 2.0 * np.sqrt(np.maximum(r * r - rho2, 0.0))
    return o, w


def ball_integral(grid, arr, node, r):
    """∫_{B_r(node)} arr, node-sampled.  The ball must stay on the grid."""
    if _cap_rungs(grid, node) * grid.h < r - 1e-12 * grid.h:
        raise RegionOutOfDomain("ball of radius %g leaves the grid" % r)
    o, w = ball_offsets(grid, r)
    idx = tuple((o + np.asarray(node)).T)
    return _fsum(arr[idx] * w)


def ball_energy(fq, x, r):
    return ball_integral(fq.grid, fq.density, _node(fq.grid, x), r)


class _BallSums:
    """Ball integrals of one array for many radii via a single forward FFT."""

    def __init__(self, grid, arr, rmax):
        self.grid = grid
        self.R = int(math.ceil(rmax / grid.h))
        self.shape = tuple(d + 2 * self.R for d in grid.dims)
        self.fshape = tuple(fft.next_fast_len(s, True) for s in self.shape)
        self.spectrum = fft.rfftn(arr, self.fshape)

    def __call__(self, r):
        g = self.grid
        o, w = ball_offsets(g, r)
        ker = np.zeros(self.fshape)
        ker[tuple((o % np.asarray(self.fshape)).T)] = w
        out = fft.irfftn(self.spectrum * fft.rfftn(ker), self.fshape)
        return out[tuple(slice(0, d) for d in g.dims)]


# --- regular scales ---------------------------------------------------------------

def _type_I_ok(fq, node, r):
    o, _ = ball_offsets(fq.grid, r)
    idx = tuple((o + np.asarray(node)).T)
    g = np.sqrt(fq.grad_sq[idx])
    hn = fq.hessian_norm[idx]
    return r * float(np.max(g + r * hn)) <= 1.0


def regular_scale_I(fq, x):
    """sup{r on the ladder : r max_{B_r(x)} (|∇Q| + r|D²Q|) <= 1}; 0 if r = h fails."""
    node = _node(fq.grid, x)
    h = fq.grid.h
    best = 0.0
    # the condition is monotone in r, so scan up to the first failure
    for k in range(1, _cap_rungs(fq.grid, node) + 1):
        if not _type_I_ok(fq, node, k * h):
            break
        best = k * h
    return best


def regular_scale_II(fq, x, Lambda):
    """sup{r on the ladder : E_ε(Q, B_r(x)) <= Λ r}; 0 if no rung passes."""
    node = _node(fq.grid, x)
    h = fq.grid.h
    for k in range(_cap_rungs(fq.grid, node), 0, -1):
        if ball_integral(fq.grid, fq.density, node, k * h) <= Lambda * k * h:
            return k * h
    return 0.0


def _cap_map(grid):
    return np.rint(grid.node_distance_to_edge() / grid.h).astype(int)


def scale_map_I(fq, kmax=None):
    """Per-node r_I.  Uses that failing at rung r means some z in B_r(x) has
    r(|∇Q| + r|D²Q|)(z) > 1, i.e. a distance transform of the violators."""
    g = fq.grid
    cap = _cap_map(g)
    kmax = int(cap.max()) if kmax is None else int(kmax)
    gn = np.sqrt(fq.grad_sq)
    hn = fq.hessian_norm
    out = np.zeros(g.dims)
    alive = np.ones(g.dims, dtype=bool)
    for k in range(1, kmax + 1):
        r = k * g.h
        seeds = r * (gn + r * hn) > 1.0
        if seeds.any():
            dist = ndimage.distance_transform_edt(~seeds) * g.h
            fail = dist < r * (1 - 1e-12)
        else:
            fail = np.zeros(g.dims, dtype=bool)
        alive &= ~fail & (k <= cap)
        if not alive.any():
            break
        out[alive] = r
    return out


def scale_map_II(fq, Lambda, kmax=None):
    """Per-node r_II (largest passing rung, ball sums by FFT convolution)."""
    g = fq.grid
    cap = _cap_map(g)
    kmax = int(cap.max()) if kmax is None else int(kmax)
    sums = _BallSums(g, fq.density, kmax * g.h)
    out = np.zeros(g.dims)
    for k in range(1, kmax + 1):
        r = k * g.h
        ok = (sums(r) <= Lambda * r) & (k <= cap)
        out[ok] = r
    return out


def bad_set(fq, r, Lambda=None, kind="II", interior=None, scale=None):
    """Nodes of ``interior`` (default: all non-edge nodes) whose scale is < r.

    A node whose ladder ran up to its edge cap without failing has a true
    scale of at least the cap and is never marked bad.
    """
    if r < fq.grid.h:
        raise ValueError("r must be at least h")
    if interior is None:
        interior = ~fq.grid.edge_mask()
    if scale is None:
        if kind == "I":
            scale = scale_map_I(fq)
        elif kind == "II":
            if Lambda is None:
                raise ValueError("type II needs Lambda")
            scale = scale_map_II(fq, Lambda)
        else:
            raise ValueError("kind must be 'I' or 'II'")
    capped = scale >= _cap_map(fq.grid) * fq.grid.h * (1 - 1e-12)
    return (scale < r) & ~capped & interior


# --- coverings --------------------------------------------------------------------

@dataclass
class Cover:
    radius: float
    count: int
    centers: np.ndarray

    def compensated(self, sigma):
        return self.count * self.radius ** (1.0 + sigma)


def greedy_cover(mask, r, grid=None):
    """Greedy cover of the masked nodes by open balls of radius r.

    Centers are masked nodes, taken in index order among those not yet
    covered.  The result is verified before returning.
    """
    mask = np.asarray(mask, dtype=bool)
    h = 1.0 if grid is None else grid.h
    if r < h:
        raise ValueError("r must be at least one grid step")
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return Cover(r, 0, np.zeros((0, mask.ndim)))
    pos = idx * h + (0.0 if grid is None else grid.lower)
    tree = cKDTree(pos)
    rr = r * (1 - 1e-12)
    covered = np.zeros(len(pos), dtype=bool)
    centers = []
    for i in range(len(pos)):
        if covered[i]:
            continue
        centers.append(i)
        covered[tree.query_ball_point(pos[i], rr)] = True
    c = pos[centers]
    d, _ = cKDTree(c).query(pos)
    if np.any(d >= r):
        raise RuntimeError("greedy cover failed verification")
    return Cover(r, len(centers), c)


# --- audits -------------------------------------------------------------------------

@dataclass
class ClearingOut:
    hypothesis: bool
    conclusion: bool
    hypothesis_margin: float
    conclusion_margin: float

    @property
    def holds(self):
        return (not self.hypothesis) or self.conclusion


def clearing_out_audit(fq, x, r, eta, C):
    """E(B_2r) <= η r log(r/ε)  ⇒  E(B_r) <= C r, evaluated with margins."""
    if not r > fq.epsilon / eta:
        raise ValueError("need r > ε/η")
    node = _node(fq.grid, x)
    e2 = ball_integral(fq.grid, fq.density, node, 2 * r)
    e1 = ball_integral(fq.grid, fq.density, node, r)
    lhs = eta * r * math.log(r / fq.epsilon)
    return ClearingOut(e2 <= lhs, e1 <= C * r, lhs - e2, C * r - e1)


@dataclass
class GoodRadius:
    r: float
    s: float
    g: float
    f: float
    lam: float

    @property
    def margin(self):
        return self.lam * self.f - self.g

    @property
    def ok(self):
        return self.g <= self.lam * self.f


def good_radius(fq, x, samples=32, phi=None, strict=True):
    """Radius r_x in [ε^(1/4), ε^(1/8)] minimizing g/f over a uniform s grid.

    f(s) = Θ_{e^s}(x), g(s) = 2/(ε² e^s) ∫_{B_{e^s}(x)} f(Q); the pair must
    satisfy g <= λ f with λ = log(f(s2)/f(s1)) / (s2 - s1).
    """
    eps = fq.epsilon
    if not 0 < eps < 1:
        raise ValueError("needs ε in (0, 1)")
    if samples < 32:
        raise ValueError("use at least 32 samples")
    phi = phi or make_phi()
    s1, s2 = 0.25 * math.log(eps), 0.125 * math.log(eps)
    if math.exp(s2) < 4 * fq.grid.h:
        raise IntervalTooNarrow("ε^(1/8) = %.4g is below 4h" % math.exp(s2))
    node = _node(fq.grid, x)
    xs = fq.grid.position(node)
    ss = np.linspace(s1, s2, samples)
    fv = np.array([theta(fq, xs, math.exp(s), phi) for s in ss])
    gv = np.array([2.0 / (eps * eps * math.exp(s)) * ball_integral(fq.grid, fq.bulk, node, math.exp(s))
                   for s in ss])
    if fv[0] <= 0:
        # f vanishes near x: any radius is admissible, g = 0
        return GoodRadius(math.exp(s1), s1, 0.0, 0.0, 0.0)
    lam = math.log(fv[-1] / fv[0]) / (s2 - s1)
    i = int(np.argmin(gv / fv))
    out = GoodRadius(math.exp(ss[i]), float(ss[i]), float(gv[i]), float(fv[i]), lam)
    if strict and not out.ok:
        raise GoodRadiusViolation("g = %.6g exceeds λ f = %.6g at x = %s" % (out.g, lam * out.f, xs))
    return out


def bulk_decay_audit(fq, x, r, M):
    """∫_{B_r(x)} f / ε³, after checking r^{-1} E_ε(B_4r(x)) <= M."""
    node = _node(fq.grid, x)
    e4 = ball_integral(fq.grid, fq.density, node, 4 * r)
    if e4 / r > M:
        raise HypothesisViolated("r^-1 E(B_4r) = %.4g exceeds M = %.4g" % (e4 / r, M))
    return ball_integral(fq.grid, fq.bulk, node, r) / fq.epsilon ** 3


def sphere_directions(n):
    """n well-spread unit vectors on the upper hemisphere (Fibonacci lattice)."""
    k = np.arange(n) + 0.5
    z = 1.0 - k / n
    phi = np.pi * (1 + 5 ** 0.5) * k
    rho = np.sqrt(1 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def directional_flatness(fq, x, r, n_dirs=64, refine=True):
    """Direction v minimizing (1/r) ∫_{B_r(x)} |v·∇Q|², and the minimum.

    Sampled on >= 64 directions, then refined locally from the best sample.
    """
    if n_dirs < 64:
        raise ValueError("use at least 64 directions")
    xs = fq.grid.position(_node(fq.grid, x))
    dirs = sphere_directions(n_dirs)
    vals = np.array([directional_energy(fq, v, xs, r) for v in dirs])
    i = int(np.argmin(vals))
    best, value = dirs[i], float(vals[i])
    if refine:
        def unit(a):
            return np.array([math.sin(a[0]) * math.cos(a[1]), math.sin(a[0]) * math.sin(a[1]), math.cos(a[0])])

        a0 = [math.acos(np.clip(best[2], -1, 1)), math.atan2(best[1], best[0])]
        res = optimize.minimize(lambda a: directional_energy(fq, unit(a), xs, r), a0,
                                method="Nelder-Mead", options={"xatol": 1e-4, "fatol": 1e-12})
        if res.fun < value:
            best, value = unit(res.x), float(res.fun)
    return best, value


@dataclass
class PinchScreen:
    """Outcome of the Θ-pinch / flat-direction screen at (x, y, r)."""

    pinched_x: bool
    flat: bool
    y_off_line: bool
    pinched_y: bool
    direction: np.ndarray
    r_II: float
    r: float

    @property
    def screened(self):
        return self.pinched_x and self.flat and self.y_off_line and self.pinched_y

    @property
    def holds(self):
        return (not self.screened) or self.r_II >= self.r / 2


def pinch_screen(fq, x, y, r, params, phi=None):
    """If Θ_r - Θ_βr is small at x and y, the field is nearly flat along some v
    near x and y lies off the line x + span v, then r_II(x) >= r/2 is expected."""
    phi = phi or make_phi()
    g = fq.grid
    xs = g.position(_node(g, x))
    ys = g.position(_node(g, y))
    bound = params.eta_clear * math.log(1.0 / fq.epsilon)
    px = theta(fq, xs, r, phi) - theta(fq, xs, params.beta * r, phi) < bound
    py = theta(fq, ys, r, phi) - theta(fq, ys, params.beta * r, phi) < bound
    v, val = directional_flatness(fq, xs, r)
    d = np.zeros(3)
    d[:g.ndim] = ys - xs
    dist_line = np.linalg.norm(d - np.dot(d, v) * v)
    inside = dist_line < params.sigma * r and np.linalg.norm(d) < r
    return PinchScreen(bool(px), val < bound, not inside, bool(py), v,
                       regular_scale_II(fq, xs, params.Lambda), r)


# --- reports -------------------------------------------------------------------------

@dataclass
class ScaleReport:
    r_I: np.ndarray | None = None
    r_II: np.ndarray | None = None
    bad: dict = dc_field(default_factory=dict)
    covers: dict = dc_field(default_factory=dict)
    sigma: float = 0.5

    def write_nodes_csv(self, path, grid, region=None):
        m = np.ones(grid.dims, dtype=bool) if region is None else np.asarray(region, dtype=bool)
        idx = np.argwhere(m)
        pos = grid.lower + idx * grid.h
        axes = "xyz"[:grid.ndim]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node"] + ["i" + a for a in axes] + list(axes) + ["r_I", "r_II"])
            flat = np.ravel_multi_index(idx.T, grid.dims)
            rI = self.r_I[m] if self.r_I is not None else np.full(len(idx), np.nan)
            rII = self.r_II[m] if self.r_II is not None else np.full(len(idx), np.nan)
            for n, i, p, a, b in zip(flat, idx, pos, rI, rII):
                w.writerow([int(n)] + [int(v) for v in i] + ["%.10g" % v for v in p]
                           + ["%.10g" % a, "%.10g" % b])

    def write_cover_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "r", "N", "N_r_1_plus_sigma"])
            for (kind, r), cov in sorted(self.covers.items()):
                w.writerow([kind, "%.10g" % r, cov.count, "%.10g" % cov.compensated(self.sigma)])
