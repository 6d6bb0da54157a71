"""ε-sweeps over boundary-condition families, per-ε measurements and verdicts.

Config files are line-oriented ``key = value`` text; ``#`` starts a comment.
Required keys: bc, winding, grid, h, eps, K, lambda, eta_clear, sigma, theta,
out_dir.  Optional keys and their defaults are listed in ``OPTIONAL``.
Lengths (h, eps, K, ball centers) are physical; ``cover_radii`` and
``audit_radii`` are in units of h.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field as dc_field, fields

import numpy as np

from .defects import core_mask
from .field import (Box, GridSpec, RegionOutOfDomain, SupportExceedsDomain, constant_bc,
                    disclination_bc, energy, hedgehog_bc, lp_gradient_norm, make_phi, theta)
from .qf1 import write_qf1
from .scales import (HypothesisViolated, ScaleParams, bad_set, bulk_decay_audit, greedy_cover,
                     scale_map_I, scale_map_II)
from .solver import SolveOptions, continuation_sweep, norm_bound, perturbation_audit
from .tensor import MaterialParams

P_LIST = (1.2, 1.5, 1.8, 2.0)
REQUIRED = ("bc", "winding", "grid", "h", "eps", "K", "lambda", "eta_clear", "sigma", "theta",
            "out_dir")
OPTIONAL = {
    "seed": "0",
    "scheme": "semi-implicit",
    "max_iters": "5000",
    "residual_tol": "1e-6",
    "a": "1", "b": "1", "c": "1",
    "eta_core": "",
    "director": "0,0,1",
    "ball_radius": "",
    "noise": "0",
    "cover_kind": "",
    "cover_radii": "2,4,8,16",
    "cover_box": "",
    "bad_I_factor": "0.25",
    "audit_centers": "20",
    "audit_radii": "0.5,1,2,4,8",
    "decay_ball": "",
    "decay_M": "200",
    "envelope_factor": "2",
    "save_fields": "1",
}


class ConfigError(ValueError):
    pass


class InsufficientRecords(ValueError):
    pass


def _floats(text, key, lineno):
    try:
        return [float(_fraction(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError("line %s: %s expects a comma list of numbers, got %r" % (lineno, key, text))


def _fraction(t):
    t = t.strip()
    if "/" in t:
        n, d = t.split("/")
        return float(n) / float(d)
    return float(t)


@dataclass
class SweepConfig:
    bc: str
    winding: float
    grid: tuple
    h: float
    eps: list
    K: tuple
    Lambda: float
    eta_clear: float
    sigma: float
    theta: float
    out_dir: str
    seed: int = 0
    scheme: str = "semi-implicit"
    max_iters: int = 5000
    residual_tol: float = 1e-6
    abc: tuple = (1.0, 1.0, 1.0)
    eta_core: float | None = None
    director: tuple = (0.0, 0.0, 1.0)
    ball_radius: float | None = None
    noise: float = 0.0
    cover_kind: str = "II"
    cover_radii: tuple = (2, 4, 8, 16)
    cover_box: tuple | None = None
    bad_I_factor: float = 0.25
    audit_centers: int = 20
    audit_radii: tuple = (0.5, 1, 2, 4, 8)
    decay_ball: tuple | None = None
    decay_M: float = 200.0
    envelope_factor: float = 2.0
    save_fields: bool = True
    text: str = ""

    @property
    def mp(self):
        a, b, c = self.abc
        return MaterialParams(a, b, c, self.eta_core)

    @property
    def params(self):
        return ScaleParams(self.Lambda, self.eta_clear, self.sigma, self.theta)

    @property
    def gridspec(self):
        return GridSpec.centered(self.grid, self.h)

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def box(self, bounds):
        nd = len(self.grid)
        return Box(tuple(bounds[0::2][:nd]), tuple(bounds[1::2][:nd]))


def parse_config(text):
    """Parse config text; raises ConfigError naming the key and line."""
    raw, lines = {}, {}
    for n, line in enumerate(io.StringIO(text), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value'" % n)
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in REQUIRED and k not in OPTIONAL:
            raise ConfigError("line %d: unknown key %r" % (n, k))
        if k in raw:
            raise ConfigError("line %d: duplicate key %r" % (n, k))
        raw[k], lines[k] = v, n
    for k in REQUIRED:
        if k not in raw:
            raise ConfigError("missing required key %r" % k)
    for k, v in OPTIONAL.items():
        raw.setdefault(k, v)
        lines.setdefault(k, "default")

    def num(k):
        vals = _floats(raw[k], k, lines[k])
        if len(vals) != 1:
            raise ConfigError("line %s: %s expects one number" % (lines[k], k))
        return vals[0]

    def opt_list(k):
        return tuple(_floats(raw[k], k, lines[k])) if raw[k] else None

    bc = raw["bc"]
    if bc not in ("hedgehog", "disclination", "constant"):
        raise ConfigError("line %s: bc must be hedgehog, disclination or constant" % lines["bc"])
    winding = num("winding")
    if bc == "disclination" and (abs(abs(winding) - 0.5) > 1e-12 and abs(abs(winding) - 1) > 1e-12):
        raise ConfigError("line %s: winding must be ±1/2 or ±1" % lines["winding"])
    grid = tuple(int(round(v)) for v in _floats(raw["grid"], "grid", lines["grid"]))
    if len(grid) not in (2, 3):
        raise ConfigError("line %s: grid needs 2 or 3 sizes" % lines["grid"])
    eps = sorted(set(_floats(raw["eps"], "eps", lines["eps"])), reverse=True)
    h = num("h")
    if eps and min(eps) < 3 * h * (1 - 1e-12):
        raise ConfigError("line %s: every eps must be at least 3h = %g" % (lines["eps"], 3 * h))
    K = tuple(_floats(raw["K"], "K", lines["K"]))
    if len(K) != 2 * len(grid):
        raise ConfigError("line %s: K needs min,max per axis (%d numbers)" % (lines["K"], 2 * len(grid)))
    abc = (num("a"), num("b"), num("c"))
    cover_kind = raw["cover_kind"] or ("I" if bc == "hedgehog" else "II")
    if cover_kind not in ("I", "II"):
        raise ConfigError("line %s: cover_kind must be I or II" % lines["cover_kind"])
    cfg = SweepConfig(
        bc=bc, winding=winding, grid=grid, h=h, eps=eps, K=K,
        Lambda=num("lambda"), eta_clear=num("eta_clear"), sigma=num("sigma"), theta=num("theta"),
        out_dir=raw["out_dir"], seed=int(num("seed")), scheme=raw["scheme"],
        max_iters=int(num("max_iters")), residual_tol=num("residual_tol"), abc=abc,
        eta_core=num("eta_core") if raw["eta_core"] else None,
        director=tuple(_floats(raw["director"], "director", lines["director"])),
        ball_radius=num("ball_radius") if raw["ball_radius"] else None,
        noise=num("noise"), cover_kind=cover_kind, cover_radii=opt_list("cover_radii") or (),
        cover_box=opt_list("cover_box"), bad_I_factor=num("bad_I_factor"),
        audit_centers=int(num("audit_centers")), audit_radii=opt_list("audit_radii") or (),
        decay_ball=opt_list("decay_ball"), decay_M=num("decay_M"),
        envelope_factor=num("envelope_factor"), save_fields=bool(int(num("save_fields"))),
        text=text)
    try:
        cfg.params
        cfg.gridspec
        SolveOptions(max_iters=cfg.max_iters, residual_tol=cfg.residual_tol, scheme=cfg.scheme)
    except ValueError as exc:
        raise ConfigError(str(exc))
    if cfg.cover_box is not None and len(cfg.cover_box) != len(K):
        raise ConfigError("line %s: cover_box needs min,max per axis" % lines["cover_box"])
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


# --- records -----------------------------------------------------------------------

@dataclass
class SweepRecord:
    epsilon: float
    converged: bool
    iterations: int
    residual: float
    max_norm: float
    E_total: float
    E_dirichlet: float
    E_bulk: float
    K_total: float
    K_dirichlet: float
    K_bulk: float
    lp: dict = dc_field(default_factory=dict)
    cover_kind: str = "II"
    covers: dict = dc_field(default_factory=dict)
    mono_worst: float = np.nan
    mono_violations: int = 0
    decay_ratio: float = np.nan
    core_nodes: int = 0
    perturb_curvature: float = np.nan


def start_field(cfg):
    g = cfg.gridspec
    mp = cfg.mp
    eps0 = cfg.eps[0]
    if cfg.bc == "hedgehog":
        fq = hedgehog_bc(g, eps0, mp=mp, radius=cfg.ball_radius)
    elif cfg.bc == "disclination":
        fq = disclination_bc(g, eps0, winding=cfg.winding, mp=mp)
    else:
        fq = constant_bc(g, cfg.director, eps0, mp=mp)
    if cfg.noise > 0:
        rng = np.random.default_rng(cfg.seed)
        v = np.array(fq.values)
        free = ~fq.boundary_mask
        v[:, free] += cfg.noise * rng.uniform(-1, 1, (5, int(free.sum())))
        fq = fq.with_values(v)
    return fq


def monotonicity_audit(fq, centers, radii, phi=None, tol=1e-3):
    """Worst (Θ_R - Θ_r)/max(Θ_R, 1) over consecutive radii, and violation count."""
    phi = phi or make_phi()
    worst, bad = np.inf, 0
    for x in centers:
        th = [theta(fq, x, r, phi) for r in radii]
        for lo, hi in zip(th, th[1:]):
            m = (hi - lo) / max(hi, 1.0)
            worst = min(worst, m)
            bad += m < -tol
    return float(worst), int(bad)


def audit_centers(cfg, grid):
    """Seeded random node centers whose Θ support fits for the largest audit radius."""
    rmax = max(cfg.audit_radii) * grid.h
    reach = math.sqrt(make_phi().t_support) * rmax
    d = grid.node_distance_to_edge()
    idx = np.argwhere(d >= reach + 1e-9)
    if len(idx) == 0:
        raise ConfigError("audit radii too large for the grid")
    rng = np.random.default_rng(cfg.seed)
    pick = rng.choice(len(idx), size=min(cfg.audit_centers, len(idx)), replace=False)
    return [grid.position(idx[i]) for i in sorted(pick)]


def measure(fq, cfg, report=None, centers=None):
    g = fq.grid
    K = cfg.box(cfg.K)
    E, EK = energy(fq), energy(fq, K)
    lp = {p: lp_gradient_norm(fq, p, K) for p in P_LIST}
    covers = {}
    if cfg.cover_radii:
        region = cfg.box(cfg.cover_box or cfg.K).mask(g)
        if cfg.cover_kind == "II":
            scale = scale_map_II(fq, cfg.Lambda)
            for k in cfg.cover_radii:
                r = k * g.h
                covers[k] = greedy_cover(bad_set(fq, r, kind="II", interior=region, scale=scale), r, g).count
        else:
            scale = scale_map_I(fq)
            for k in cfg.cover_radii:
                r = k * g.h
                rb = max(cfg.bad_I_factor * r, g.h)
                covers[k] = greedy_cover(bad_set(fq, rb, kind="I", interior=region, scale=scale), r, g).count
    worst, nbad = (np.nan, 0)
    if cfg.audit_centers and cfg.audit_radii:
        centers = centers if centers is not None else audit_centers(cfg, g)
        worst, nbad = monotonicity_audit(fq, centers, [k * g.h for k in cfg.audit_radii])
    decay = np.nan
    if cfg.decay_ball:
        x, r = cfg.decay_ball[:-1], cfg.decay_ball[-1]
        try:
            decay = bulk_decay_audit(fq, x, r, cfg.decay_M)
        except (HypothesisViolated, RegionOutOfDomain):
            decay = np.nan
    rep = report
    return SweepRecord(
        epsilon=fq.epsilon,
        converged=bool(rep.converged) if rep else True,
        iterations=rep.iterations if rep else 0,
        residual=rep.final_residual if rep else np.nan,
        max_norm=float(np.sqrt(np.max(np.sum(np.asarray(fq.values) ** 2, axis=0)))),
        E_total=E.total, E_dirichlet=E.dirichlet, E_bulk=E.bulk,
        K_total=EK.total, K_dirichlet=EK.dirichlet, K_bulk=EK.bulk,
        lp=lp, cover_kind=cfg.cover_kind, covers=covers,
        mono_worst=worst, mono_violations=nbad, decay_ratio=decay,
        core_nodes=int(core_mask(fq).sum()),
        perturb_curvature=perturbation_audit(fq, trials=4, seed=cfg.seed).worst_curvature)


def run_sweep(cfg, keep_fields=False):
    """Solve and measure every ε of the config.  Returns records (and fields)."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    opts = SolveOptions(max_iters=cfg.max_iters, residual_tol=cfg.residual_tol, scheme=cfg.scheme,
                        seed=cfg.seed)
    start = start_field(cfg)
    results = continuation_sweep(start, cfg.eps, opts)
    centers = audit_centers(cfg, start.grid) if cfg.audit_centers and cfg.audit_radii else None
    records, kept = [], []
    for i, (eps, (fq, rep)) in enumerate(zip(cfg.eps, results)):
        if fq is None:
            continue
        if cfg.save_fields:
            write_qf1(os.path.join(cfg.out_dir, "field_%02d.qf1" % i), fq)
        rep.write_csv(os.path.join(cfg.out_dir, "convergence_%02d.csv" % i))
        records.append(measure(fq, cfg, rep, centers))
        if keep_fields:
            kept.append(fq)
    return (records, kept) if keep_fields else records


# --- CSV ------------------------------------------------------------------------------

_SCALAR = [f.name for f in fields(SweepRecord) if f.name not in ("lp", "covers")]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _record_columns(records):
    radii = sorted({k for r in records for k in r.covers})
    return _SCALAR + ["lp_%g" % p for p in P_LIST] + ["N_r%g" % k for k in radii], radii


def write_records_csv(path, records):
    cols, radii = _record_columns(records)
    with open(path, "w", newline="") as fh:
        fh.write("# one row per epsilon; energies on the whole grid (E_*) and on K (K_*); "
                 "K_bulk is the integral of f/eps^2 over K; lp_p is the L^p norm of grad Q on K; "
                 "N_r<k> is the greedy covering count at radius k*h\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            row = [_fmt(getattr(r, c)) for c in _SCALAR]
            row += [_fmt(r.lp.get(p, np.nan)) for p in P_LIST]
            row += [str(r.covers.get(k, "")) for k in radii]
            w.writerow(row)


def read_records_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    types = {f.name: f.type for f in fields(SweepRecord)}
    out = []
    for row in rows:
        kw = {}
        for c in _SCALAR:
            t, v = types[c], row[c]
            if t == "bool":
                kw[c] = bool(int(v))
            elif t == "int":
                kw[c] = int(v)
            elif t == "str":
                kw[c] = v
            else:
                kw[c] = float(v)
        kw["lp"] = {p: float(row["lp_%g" % p]) for p in P_LIST}
        kw["covers"] = {float(k[3:]): int(v) for k, v in row.items() if k.startswith("N_r") and v != ""}
        out.append(SweepRecord(**kw))
    return out


# --- verdicts -----------------------------------------------------------------------------

@dataclass
class Verdict:
    name: str
    status: str  # "pass" | "fail" | "not applicable"
    margin: float = np.nan
    details: dict = dc_field(default_factory=dict)

    @property
    def passed(self):
        return self.status == "pass"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return None if not np.isfinite(v) else float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_verdicts_json(path, verdicts):
    data = [{"name": v.name, "status": v.status, "margin": _jsonable(v.margin),
             "details": _jsonable(v.details)} for v in verdicts]
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_verdicts_json(path):
    with open(path) as fh:
        data = json.load(fh)
    return [Verdict(d["name"], d["status"], np.nan if d["margin"] is None else d["margin"], d["details"])
            for d in data]


def fit_log_energy(records):
    """Least-squares fit E_total = slope·log(1/ε) + intercept; returns (slope, intercept, R²)."""
    x = np.log(1.0 / np.array([r.epsilon for r in records]))
    y = np.array([r.E_total for r in records])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - A @ [slope, icpt]) ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def check_hypotheses(records, mp, envelope_factor=2.0):
    """Energy envelope E <= M (log(1/ε) + 1), M fitted at the coarsest ε times
    ``envelope_factor``, and sup|Q| <= 2 sqrt(2/3) s_*.  Returns (ok, details)."""
    recs = sorted(records, key=lambda r: -r.epsilon)
    bound = norm_bound(mp)
    e0 = recs[0]
    M = envelope_factor * max(e0.E_total, 0.0) / (math.log(1.0 / e0.epsilon) + 1.0)
    env = [bool(r.E_total <= M * (math.log(1.0 / r.epsilon) + 1.0) * (1 + 1e-12) + 1e-12) for r in recs]
    linf = [bool(r.max_norm <= bound * (1 + 1e-12)) for r in recs]
    ok = all(env) and all(linf)
    return ok, {"M_envelope": M, "envelope_ok": env, "linf_bound": bound, "linf_ok": linf}


def _guard(name, records, mp, envelope_factor, need=4):
    if len(records) < need:
        raise InsufficientRecords("%s needs at least %d records, got %d" % (name, need, len(records)))
    if not all(r.converged for r in records):
        return Verdict(name, "fail", np.nan, {"reason": "unconverged records",
                                               "converged": [r.converged for r in records]})
    curv = [r.perturb_curvature for r in records]
    if any(c < 0 for c in curv):
        # a negative second difference means a saddle, not a local minimizer
        return Verdict(name, "not applicable", np.nan, {"reason": "perturbation audit failed",
                                                         "perturb_curvature": curv})
    ok, det = check_hypotheses(records, mp, envelope_factor)
    if not ok:
        return Verdict(name, "not applicable", np.nan, dict(det, reason="hypotheses violated"))
    return None


def verdict_bulk_uniformity(records, mp=None, factor=3.0, envelope_factor=2.0):
    """∫_K f/ε² within [ref/factor, factor·ref], ref at the coarsest ε."""
    mp = mp or MaterialParams()
    g = _guard("bulk_uniformity", records, mp, envelope_factor)
    if g:
        return g
    recs = sorted(records, key=lambda r: -r.epsilon)
    vals = np.array([r.K_bulk for r in recs])
    ref = vals[0]
    lo, hi = ref / factor, ref * factor
    ok = bool(np.all(vals >= lo) and np.all(vals <= hi))
    margin = float(min(np.min(vals - lo), np.min(hi - vals)))
    floor = bool(np.all(vals >= 0.25 * ref))
    return Verdict("bulk_uniformity", "pass" if ok else "fail", margin,
                   {"ref": ref, "band": [lo, hi], "values": vals.tolist(), "above_quarter_ref": floor,
                    "min_over_ref": float(vals.min() / ref) if ref > 0 else None})


def verdict_lp_compactness(records, mp=None, tol=0.25, envelope_factor=2.0, line_family=True):
    """Bounded L^p (p < 2) norms on K, and log growth of the p = 2 norm squared."""
    mp = mp or MaterialParams()
    g = _guard("lp_compactness", records, mp, envelope_factor)
    if g:
        return g
    recs = sorted(records, key=lambda r: -r.epsilon)
    per_p = {}
    ok = True
    margin = np.inf
    for p in P_LIST[:-1]:
        v = np.array([r.lp[p] for r in recs])
        var = 0.0 if v.min() == 0 else float(v.max() / v.min() - 1.0)
        per_p[str(p)] = {"values": v.tolist(), "variation": var, "status": "pass" if var <= tol else "fail"}
        ok &= var <= tol
        margin = min(margin, tol - var)
    slope, icpt, r2 = fit_log_energy(recs)
    sq = np.array([r.lp[2.0] ** 2 for r in recs])
    if not line_family or slope <= 0:
        per_p["2"] = {"values": sq.tolist(), "status": "not applicable", "slope": slope}
    else:
        steps = np.log(np.array([r.epsilon for r in recs[:-1]]) / np.array([r.epsilon for r in recs[1:]]))
        need = 0.5 * slope * steps
        inc = np.diff(sq)
        good = bool(np.all(inc >= need))
        per_p["2"] = {"values": sq.tolist(), "increments": inc.tolist(), "required": need.tolist(),
                      "slope": slope, "status": "pass" if good else "fail"}
        ok &= good
        margin = min(margin, float(np.min((inc - need) / need)))
    return Verdict("lp_compactness", "pass" if ok else "fail", float(margin), per_p)


def verdict_covering(records, sigma=0.5, factor=4.0, min_radii=4, which=-1, mp=None, envelope_factor=2.0):
    """max_r N(r) r^{1+σ} <= factor · min_r N(r) r^{1+σ} on one record (default: finest ε).

    Radii are in units of h, so the ratio test is unit-free.
    """
    g = _guard("covering", records, mp or MaterialParams(), envelope_factor, need=1)
    if g:
        return g
    recs = sorted(records, key=lambda r: -r.epsilon)
    rec = recs[which]
    radii = sorted(rec.covers)
    if len(radii) < min_radii:
        raise InsufficientRecords("covering verdict needs counts at >= %d radii" % min_radii)
    counts = np.array([rec.covers[k] for k in radii], dtype=float)
    comp = counts * np.array(radii, dtype=float) ** (1 + sigma)
    if np.all(counts == 0):
        return Verdict("covering", "pass", 0.0, {"radii": radii, "counts": counts.tolist(), "empty": True})
    ok = bool(comp.max() <= factor * comp.min())
    return Verdict("covering", "pass" if ok else "fail", float(factor * comp.min() - comp.max()),
                   {"epsilon": rec.epsilon, "kind": rec.cover_kind, "radii": radii,
                    "counts": counts.tolist(), "compensated": comp.tolist(),
                    "ratio": float(comp.max() / comp.min()) if comp.min() > 0 else None})


def verdict_counts_bounded(records, factor=4.0, which=-1, mp=None, envelope_factor=2.0):
    """Point-defect regime: covering counts bounded independently of r."""
    g = _guard("counts_bounded", records, mp or MaterialParams(), envelope_factor, need=1)
    if g:
        return g
    recs = sorted(records, key=lambda r: -r.epsilon)
    rec = recs[which]
    radii = sorted(rec.covers)
    counts = np.array([rec.covers[k] for k in radii], dtype=float)
    if counts.max() == 0:
        return Verdict("counts_bounded", "pass", 0.0, {"radii": radii, "counts": counts.tolist()})
    ok = bool(counts.max() <= factor * max(counts.min(), 1.0))
    return Verdict("counts_bounded", "pass" if ok else "fail", float(factor * max(counts.min(), 1) - counts.max()),
                   {"epsilon": rec.epsilon, "radii": radii, "counts": counts.tolist()})


def verdict_decay(records, factor=4.0, mp=None, envelope_factor=2.0):
    """∫_{B_r(x)} f/ε³ at the configured ball stays within max/min <= factor."""
    g = _guard("bulk_decay", records, mp or MaterialParams(), envelope_factor, need=2)
    if g:
        return g
    vals = np.array([r.decay_ratio for r in sorted(records, key=lambda r: -r.epsilon)])
    if not np.all(np.isfinite(vals)):
        return Verdict("bulk_decay", "not applicable", np.nan, {"values": _jsonable(vals.tolist())})
    if vals.max() == 0:
        return Verdict("bulk_decay", "pass", 0.0, {"values": vals.tolist()})
    ratio = float(vals.max() / vals.min()) if vals.min() > 0 else np.inf
    return Verdict("bulk_decay", "pass" if ratio <= factor else "fail", factor - ratio,
                   {"values": vals.tolist(), "ratio": ratio})


def verdict_log_energy(records, line_length, mp=None, tol=0.15, r2_min=0.98, envelope_factor=2.0):
    """E_ε linear in log(1/ε) with slope within tol of (π/2) s_*² L."""
    mp = mp or MaterialParams()
    g = _guard("log_energy", records, mp, envelope_factor)
    if g:
        return g
    slope, icpt, r2 = fit_log_energy(records)
    ref = 0.5 * math.pi * mp.s_star ** 2 * line_length
    rel = slope / ref - 1.0
    ok = abs(rel) <= tol and r2 >= r2_min
    return Verdict("log_energy", "pass" if ok else "fail", float(tol - abs(rel)),
                   {"slope": slope, "intercept": icpt, "r2": r2, "reference": ref, "relative_error": rel})


def sweep_verdicts(records, cfg):
    mp = cfg.mp
    out = []
    if len(records) >= 4:
        out.append(verdict_bulk_uniformity(records, mp, envelope_factor=cfg.envelope_factor))
        line = cfg.bc == "disclination"
        out.append(verdict_lp_compactness(records, mp, envelope_factor=cfg.envelope_factor, line_family=line))
        if line:
            L = 1.0 if len(cfg.grid) == 2 else (cfg.grid[2] - 1) * cfg.h
            out.append(verdict_log_energy(records, L, mp, envelope_factor=cfg.envelope_factor))
    if records and len(records[-1].covers) >= 4:
        if cfg.cover_kind == "II":
            out.append(verdict_covering(records, cfg.sigma, mp=mp, envelope_factor=cfg.envelope_factor))
        else:
            out.append(verdict_counts_bounded(records, mp=mp, envelope_factor=cfg.envelope_factor))
    if cfg.decay_ball and len(records) >= 2:
        out.append(verdict_decay(records, mp=mp, envelope_factor=cfg.envelope_factor))
    return out


def emit_report(records, verdicts, out_dir):
    """Write records.csv, verdicts.json and plot-ready columns (plot.csv)."""
    os.makedirs(out_dir, exist_ok=True)
    write_records_csv(os.path.join(out_dir, "records.csv"), records)
    write_verdicts_json(os.path.join(out_dir, "verdicts.json"), verdicts)
    write_plot_csv(os.path.join(out_dir, "plot.csv"), records)


def write_plot_csv(path, records):
    with open(path, "w", newline="") as fh:
        fh.write("# log_inv_eps E_total K_bulk lp_1.2 lp_1.5 lp_1.8 lp_2_squared\n")
        for r in sorted(records, key=lambda r: -r.epsilon):
            vals = [math.log(1.0 / r.epsilon), r.E_total, r.K_bulk] + [r.lp[p] for p in P_LIST[:-1]] \
                + [r.lp[2.0] ** 2]
            fh.write(" ".join("%.10g" % v for v in vals) + "\n")
