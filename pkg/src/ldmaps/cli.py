"""Command-line interface.

Subcommands: run (full deviation report), pressure, rate, horseshoe,
pullbacks, safe, density.  Inputs come from a JSON config file plus flag
overrides; outputs are CSV tables and a JSON report.  Exit codes: 0 on
success, 2 when a tolerance comparison fails, 1 on errors.  The
environment variable LDMAPS_THREADS sets the worker count for the
quadrature loops.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness, horseshoe, pullback, safety, thermo
from .errors import LdmapsError
from .maps import (
    Interval,
    chebyshev_map,
    map_from_json,
    observable_from_json,
)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _get_map(args, cfg):
    spec = getattr(args, "map", None) or cfg.get("map") or {"kind": "chebyshev"}
    if isinstance(spec, str):
        if spec == "chebyshev":
            return chebyshev_map()
        if spec.startswith("quadratic:"):
            return map_from_json({"kind": "quadratic", "a": float(spec.split(":", 1)[1])})
        spec = json.loads(spec)
    return map_from_json(spec)


def _get_observable(args, cfg, m):
    spec = getattr(args, "observable", None) or cfg.get("observable") or "identity"
    return observable_from_json(spec, m)


def _get_window(args, cfg):
    w = getattr(args, "window", None) or cfg.get("window")
    if w is None:
        raise LdmapsError("a window [lo, hi] is required")
    if isinstance(w, str):
        w = json.loads(w)
    return float(w[0]), float(w[1])


def _outdir(args) -> Path:
    out = Path(getattr(args, "out_dir", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    phi = _get_observable(args, cfg, m)
    window = _get_window(args, cfg)
    kwargs = {}
    for key in (
        "n_list",
        "grid",
        "scgf_n",
        "scgf_samples",
        "theta_points",
        "ulam_theta_points",
        "bins",
        "max_period",
        "tol_abs",
        "tol_rel",
        "attach_horseshoe",
        "horseshoe_n",
        "horseshoe_x0",
    ):
        if key in cfg:
            kwargs[key] = tuple(cfg[key]) if key == "n_list" else cfg[key]
    if args.grid is not None:
        kwargs["grid"] = args.grid
    if args.n_list is not None:
        kwargs["n_list"] = tuple(int(v) for v in args.n_list.split(","))
    if args.tol_abs is not None:
        kwargs["tol_abs"] = args.tol_abs
    if args.no_horseshoe:
        kwargs["attach_horseshoe"] = False
    config = harness.LdpConfig(**kwargs)
    report = harness.ldp_report(m, phi, window, config)
    out = _outdir(args)
    harness.write_volumes_csv(out / "volumes.csv", report.experiment)
    harness.write_scgf_csv(out / "scgf.csv", report.rate_table)
    harness.write_rate_csv(out / "rate.csv", report.rate_table)
    harness.write_rate_csv(out / "rate_ulam.csv", report.rate_table_ulam)
    harness.write_report_json(out / "report.json", report)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return 0 if report.passed else 2


def cmd_pressure(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    psi = None
    if args.psi and args.psi != "zero":
        psi = observable_from_json(args.psi, m)
    value = thermo.pressure(m, psi, args.method, args.size)
    print(json.dumps({"pressure": value, "method": args.method, "size": args.size}))
    return 0


def cmd_rate(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    phi = _get_observable(args, cfg, m)
    thetas = np.linspace(args.theta_lo, args.theta_hi, args.theta_points)
    if args.method == "grid-mc":
        lam = thermo.scgf_table(
            m, phi, thetas, method="grid-mc", n=args.n, samples=args.samples
        )
    else:
        lam = thermo.scgf_table(m, phi, thetas, method="ulam-pressure", bins=args.bins)
    c_phi, d_phi = thermo.observable_range(m, phi, args.max_period)
    table = thermo.legendre_rate(thetas, lam, c_phi=c_phi, d_phi=d_phi)
    out = _outdir(args)
    harness.write_scgf_csv(out / "scgf.csv", table)
    harness.write_rate_csv(out / "rate.csv", table)
    print(
        json.dumps(
            {
                "c_phi": c_phi,
                "d_phi": d_phi,
                "theta_points": len(table.theta),
                "t_points": len(table.t),
                "files": ["scgf.csv", "rate.csv"],
            }
        )
    )
    return 0


def cmd_horseshoe(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    constraints = []
    spec = cfg.get("constraints", [])
    if args.constraints:
        spec = json.loads(args.constraints)
    for c in spec:
        phi = observable_from_json(c["observable"], m)
        constraints.append((phi, float(c["alpha"])))
    cons = horseshoe.ConstraintSet(constraints=tuple(constraints), horizon=args.n)
    params = horseshoe.HorseshoeParams(
        rho=args.rho, epsilon=args.epsilon if args.epsilon is not None else 0.4
    )
    hs = horseshoe.build_horseshoe(m, cons, args.x0, params)
    doc = horseshoe.horseshoe_to_json(hs)
    out = _outdir(args)
    with open(out / "horseshoe.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    bound = horseshoe.free_energy_lower_bound(hs)
    print(
        json.dumps(
            {
                "q": hs.q,
                "branches": hs.t,
                "delta": hs.distortion_bound,
                "free_energy_lower_bound": bound,
                "file": "horseshoe.json",
            }
        )
    )
    return 0


def cmd_pullbacks(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    lo, hi = (float(v) for v in args.target.split(","))
    pbs = pullback.pullbacks(m, Interval(lo, hi), args.time)
    print(json.dumps(pullback.pullbacks_to_json(pbs), indent=2))
    return 0


def cmd_safe(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    query = safety.safety_balls(m, args.alpha, args.n, args.j_max)
    union = query.union_intervals()
    points = safety.safe_dense_set(m, args.alpha, args.n, args.eta, args.j_max)
    summary = {
        "alpha": args.alpha,
        "n": args.n,
        "j_max": args.j_max,
        "obstruction_union": [[iv.lo, iv.hi] for iv in union],
        "obstruction_total_length": sum(iv.length for iv in union),
        "tail_radius_bound": query.tail_radius_bound,
        "eta": args.eta,
        "safe_points": points,
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_density(args) -> int:
    cfg = _load_config(args.config)
    m = _get_map(args, cfg)
    op = thermo.ulam_operator(m, args.bins)
    density = thermo.invariant_density(op)
    out = _outdir(args)
    harness.write_density_csv(out / "density.csv", op.mids, density)
    stats = thermo.measure_stats_ulam(op)
    print(
        json.dumps(
            {
                "bins": args.bins,
                "lyapunov": stats.lyapunov,
                "entropy": stats.entropy,
                "free_energy": stats.free_energy,
                "file": "density.csv",
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldmaps", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--map", help="map spec: 'chebyshev', 'quadratic:a', or JSON")
        sp.add_argument("--out-dir", help="output directory for CSV/JSON files")

    sp = sub.add_parser("run", help="full deviation report")
    common(sp)
    sp.add_argument("--observable", help="'identity', 'log-deriv', or JSON poly spec")
    sp.add_argument("--window", help="JSON [lo, hi]")
    sp.add_argument("--grid", type=int, help="quadrature points per horizon")
    sp.add_argument("--n-list", help="comma-separated horizons")
    sp.add_argument("--tol-abs", type=float, help="absolute tolerance override")
    sp.add_argument("--no-horseshoe", action="store_true")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("pressure", help="topological pressure of a potential")
    common(sp)
    sp.add_argument("--psi", default="zero", help="'zero', 'log-deriv', or JSON spec")
    sp.add_argument("--method", choices=("periodic", "ulam"), default="ulam")
    sp.add_argument("--size", type=int, default=4096, help="period n or bin count")
    sp.set_defaults(fn=cmd_pressure)

    sp = sub.add_parser("rate", help="cumulant generating function and rate tables")
    common(sp)
    sp.add_argument("--observable", help="'identity', 'log-deriv', or JSON poly spec")
    sp.add_argument("--method", choices=("grid-mc", "ulam-pressure"), default="grid-mc")
    sp.add_argument("--n", type=int, default=25)
    sp.add_argument("--samples", type=int, default=10**6)
    sp.add_argument("--bins", type=int, default=4096)
    sp.add_argument("--theta-lo", type=float, default=-8.0)
    sp.add_argument("--theta-hi", type=float, default=8.0)
    sp.add_argument("--theta-points", type=int, default=201)
    sp.add_argument("--max-period", type=int, default=12)
    sp.set_defaults(fn=cmd_rate)

    sp = sub.add_parser("horseshoe", help="build and certify a constrained horseshoe")
    common(sp)
    sp.add_argument("--constraints", help='JSON [{"observable": ..., "alpha": ...}]')
    sp.add_argument("--n", type=int, required=True, help="constraint horizon")
    sp.add_argument("--x0", type=float, default=0.5)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--epsilon", type=float)
    sp.set_defaults(fn=cmd_horseshoe)

    sp = sub.add_parser("pullbacks", help="components of f^-n of an interval")
    common(sp)
    sp.add_argument("--target", required=True, help="lo,hi")
    sp.add_argument("--time", type=int, default=1)
    sp.set_defaults(fn=cmd_pullbacks)

    sp = sub.add_parser("safe", help="obstruction balls and a safe dense set")
    common(sp)
    sp.add_argument("--alpha", type=float, default=2.0)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--eta", type=float, default=0.1)
    sp.add_argument("--j-max", type=int, default=10**4)
    sp.set_defaults(fn=cmd_safe)

    sp = sub.add_parser("density", help="stationary density of the bin chain")
    common(sp)
    sp.add_argument("--bins", type=int, default=4096)
    sp.set_defaults(fn=cmd_density)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LdmapsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
