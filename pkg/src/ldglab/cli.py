"""Command-line front end: ``ldglab {minimize,sweep,scales,defects,report}``.

Exit codes: 0 success, 2 solver did not converge, 1 any other error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from importlib import resources

import numpy as np
import scipy
from scipy import fft

from . import __version__
from .defects import (Cylinder, LoopSpec, LoopThroughCore, cross_section_scan, loop_class,
                      sharpness_lower_bound, write_scan_csv)
from .experiments import (ConfigError, emit_report, parse_config, read_records_csv, run_sweep,
                          start_field, sweep_verdicts, write_plot_csv)
from .qf1 import read_qf1, write_qf1, write_vtk
from .scales import ScaleReport, bad_set, greedy_cover, scale_map_I, scale_map_II
from .solver import SolveOptions, minimize

log = logging.getLogger("ldglab")


def apply_overrides(text, overrides):
    """Replace or append ``key = value`` lines given as ``key=value`` strings."""
    lines = text.splitlines()
    for ov in overrides or ():
        if "=" not in ov:
            raise ConfigError("override %r is not key=value" % ov)
        key, val = (s.strip() for s in ov.split("=", 1))
        lines = [ln for ln in lines if ln.split("#", 1)[0].split("=", 1)[0].strip() != key]
        lines.append("%s = %s" % (key, val))
    return "\n".join(lines) + "\n"


def _read_config(path, overrides):
    with open(path) as fh:
        text = fh.read()
    return parse_config(apply_overrides(text, overrides))


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def write_manifest(out_dir, command, argv, config_text=None, inputs=()):
    cal = resources.files("ldglab").joinpath("calibration.json").read_bytes()
    man = {
        "command": command,
        "argv": list(argv),
        "config_sha256": _sha256(config_text.encode()) if config_text is not None else None,
        "inputs_sha256": {os.path.basename(p): _sha256(open(p, "rb").read()) for p in inputs},
        "calibration_sha256": _sha256(cal),
        "versions": {"ldglab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    os.makedirs(out_dir or ".", exist_ok=True)
    with open(os.path.join(out_dir or ".", "manifest.json"), "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_minimize(args):
    cfg = _read_config(args.config, args.set)
    fq = start_field(cfg)
    eps = args.eps if args.eps is not None else cfg.eps[-1]
    fq = fq.with_values(fq.values, epsilon=eps)
    opts = SolveOptions(max_iters=cfg.max_iters, residual_tol=cfg.residual_tol, scheme=cfg.scheme,
                        seed=cfg.seed, log_every=args.log_every,
                        checkpoint=args.out + ".ckpt" if args.log_every else None)
    out, rep = minimize(fq, opts)
    write_qf1(args.out, out)
    rep.write_csv(os.path.splitext(args.out)[0] + "_convergence.csv")
    if args.vtk:
        write_vtk(args.vtk, out)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "minimize", sys.argv, cfg.text)
    print("converged=%s iterations=%d energy=%.12g residual=%.3e"
          % (rep.converged, rep.iterations, rep.final_energy, rep.final_residual))
    return 0 if rep.converged else 2


def cmd_sweep(args):
    cfg = _read_config(args.config, args.set)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    records = run_sweep(cfg)
    verdicts = sweep_verdicts(records, cfg)
    emit_report(records, verdicts, cfg.out_dir)
    write_manifest(cfg.out_dir, "sweep", sys.argv, cfg.text)
    for v in verdicts:
        print("%s: %s" % (v.name, v.status))
    return 0 if all(r.converged for r in records) and len(records) == len(cfg.eps) else 2


def _radii(text):
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_scales(args):
    fq = read_qf1(args.field)
    g = fq.grid
    os.makedirs(args.out_dir, exist_ok=True)
    rep = ScaleReport(sigma=args.sigma)
    rep.r_I = scale_map_I(fq)
    rep.r_II = scale_map_II(fq, args.Lambda)
    for kind, scale in (("I", rep.r_I), ("II", rep.r_II)):
        for k in _radii(args.radii):
            r = k * g.h
            m = bad_set(fq, r, kind=kind, scale=scale)
            rep.bad[(kind, k)] = m
            rep.covers[(kind, k)] = greedy_cover(m, r, g)
    region = None
    if args.stride > 1:
        region = np.zeros(g.dims, dtype=bool)
        region[(slice(None, None, args.stride),) * g.ndim] = True
    rep.write_nodes_csv(os.path.join(args.out_dir, "scales.csv"), g, region)
    rep.write_cover_csv(os.path.join(args.out_dir, "covers.csv"))
    with open(os.path.join(args.out_dir, "bad_sets.csv"), "w") as fh:
        fh.write("kind,r,node\n")
        for (kind, k), m in sorted(rep.bad.items()):
            for n in np.flatnonzero(m):
                fh.write("%s,%g,%d\n" % (kind, k, n))
    if args.vtk:
        write_vtk(args.vtk, fq)
    write_manifest(args.out_dir, "scales", sys.argv, inputs=[args.field])
    return 0


def read_loops(path):
    """Loop file: one point per line (x y z, commas or spaces); blank line ends a loop."""
    loops, cur = [], []
    with open(path) as fh:
        for line in list(fh) + [""]:
            line = line.split("#", 1)[0].strip()
            if not line:
                if cur:
                    loops.append(LoopSpec(np.array(cur)))
                    cur = []
                continue
            cur.append([float(t) for t in line.replace(",", " ").split()])
    return loops


def cmd_defects(args):
    fq = read_qf1(args.field)
    os.makedirs(args.out_dir, exist_ok=True)
    inputs = [args.field]
    if args.loops:
        inputs.append(args.loops)
        with open(os.path.join(args.out_dir, "loops.jsonl"), "w") as fh:
            for i, loop in enumerate(read_loops(args.loops)):
                try:
                    v = loop_class(fq, loop)
                    rec = {"loop": i, "class": v.label, "min_gap": v.min_gap}
                except LoopThroughCore as exc:
                    rec = {"loop": i, "class": "undefined", "reason": str(exc)}
                fh.write(json.dumps(rec) + "\n")
                print("loop %d: %s" % (i, rec["class"]))
    if args.cylinder:
        c = _radii(args.cylinder)
        if len(c) != 7:
            raise ValueError("--cylinder wants cx,cy,cz,radius,axis,t0,t1")
        cyl = Cylinder(tuple(c[:3]), c[3], int(c[4]), (c[5], c[6]))
        hits = cross_section_scan(fq, cyl.axis, cyl.center, cyl.radius, cyl.t_range)
        write_scan_csv(os.path.join(args.out_dir, "scan.csv"), hits)
        found = sum(h.found for h in hits)
        print("slabs with core: %d of %d; cylinder bulk/eps^2 = %.6g"
              % (found, len(hits), sharpness_lower_bound(fq, cyl)))
    write_manifest(args.out_dir, "defects", sys.argv, inputs=inputs)
    return 0


def cmd_report(args):
    records = read_records_csv(args.records)
    write_plot_csv(args.out, records)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ldglab", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap on FFT worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("minimize", help="solve at one ε and write a QF1 field")
    m.add_argument("config")
    m.add_argument("--out", default="field.qf1")
    m.add_argument("--eps", type=float, default=None, help="ε to solve at (default: smallest in config)")
    m.add_argument("--log-every", type=int, default=0)
    m.add_argument("--vtk", default=None)
    m.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    m.set_defaults(func=cmd_minimize)

    s = sub.add_parser("sweep", help="run an ε sweep and write records and verdicts")
    s.add_argument("config")
    s.add_argument("--out-dir", default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("scales", help="regular scales, bad sets and coverings of a field")
    c.add_argument("field")
    c.add_argument("--lambda", dest="Lambda", type=float, required=True)
    c.add_argument("--radii", default="2,4,8,16", help="radii in units of h")
    c.add_argument("--sigma", type=float, default=0.5)
    c.add_argument("--stride", type=int, default=1, help="write every n-th node to scales.csv")
    c.add_argument("--out-dir", default="scales_out")
    c.add_argument("--vtk", default=None)
    c.set_defaults(func=cmd_scales)

    d = sub.add_parser("defects", help="loop classes and cross-section scans")
    d.add_argument("field")
    d.add_argument("--loops", default=None)
    d.add_argument("--cylinder", default=None, help="cx,cy,cz,radius,axis,t0,t1")
    d.add_argument("--out-dir", default="defects_out")
    d.set_defaults(func=cmd_defects)

    r = sub.add_parser("report", help="plot-ready columns from a records CSV")
    r.add_argument("records")
    r.add_argument("--out", default="plot.csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with fft.set_workers(args.threads or 1):
            return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
