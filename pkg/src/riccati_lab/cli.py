"""Command line entry point: ``riccati-lab {run,orbit,catalog,validate}``.

Exit codes: 0 ok, 1 invariant violation, 2 configuration error, 3 numeric
non-convergence.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import parse_check, parse_config, load_config
from .errors import ConfigError, DomainError, NoConvergence
from .models import CATALOG, build_model

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _cmd_run(args) -> int:
    from .experiment import run_experiment
    from .report import emit_report

    cfg = load_config(args.config)
    rep = run_experiment(cfg, jobs=args.jobs, write=False)
    out = args.out or cfg.output_path
    fmts = args.format.split(",") if args.format else cfg.formats
    if out:
        for p in emit_report(rep, fmts, out):
            print(f"wrote {p}")
    agg = rep.aggregate
    print(f"orbits: {agg['size']}  status: {agg['status']}  exit: {rep.exit_code}")
    for lab, s in agg["checks"].items():
        print(f"  {lab}: {json.dumps(s)}")
    print(f"determinism hash: {rep.meta['determinism_hash']}")
    return rep.exit_code


def _parse_theta(text: str) -> dict:
    """``x1,x2;v1,v2`` for chart models or a bare phase ``t0`` for profiles."""
    if ";" in text:
        p, v = text.split(";", 1)
        return {"point": [float(x) for x in p.split(",")], "v": [float(x) for x in v.split(",")]}
    return {"t0": float(text)}


def _cmd_orbit(args) -> int:
    from .experiment import analyze_sample, sample_unit_tangent
    from .report import dumps

    checks = [c.strip() for c in _split_checks(args.checks)] if args.checks else []
    doc = {
        "model": {"name": args.model, "params": json.loads(args.params) if args.params else {}},
        "ensemble": {"size": 1, "seed": 0, "sampler": {"kind": "Explicit", "points": [_parse_theta(args.theta)]}},
        "horizons": {"T": args.T, "dt": args.dt, "tol": args.tol},
        "checks": checks,
    }
    cfg = parse_config(doc)
    model = cfg.build_model()
    try:
        theta = sample_unit_tangent(model, 1, 0, cfg.sampler)[0]
    except DomainError as exc:
        raise ConfigError("--theta", str(exc)) from None
    rec = analyze_sample(cfg, 0, theta, model)
    sys.stdout.write(dumps(rec))
    if any(v and v.get("violated") for v in rec["checks"].values()):
        return EXIT_VIOLATION
    return EXIT_NUMERIC if rec["status"] == "error" else EXIT_OK


def _split_checks(text: str) -> list[str]:
    # commas inside parentheses belong to the check's arguments
    out, depth, cur = [], 0, ""
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur)
    for i, c in enumerate(out):
        parse_check(c.strip(), f"--checks[{i}]")
    return out


def _cmd_catalog(args) -> int:
    for name, info in CATALOG.items():
        m = build_model(name, info["params"])
        lo, hi = m.curvature_range()
        print(f"{name:24s} dim={m.dim}  K in [{lo:g}, {hi:g}]  {info['curvature']}")
        print(f"{'':24s} params: {json.dumps(info['params'])}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {cfg.model_name}, {cfg.size} orbits, T={cfg.T:g}, dt={cfg.dt:g}, "
          f"checks=[{', '.join(c.label() for c in cfg.checks)}], config hash {cfg.hash()[:16]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riccati-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an ensemble experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=None, help="worker processes (default: $RICCATI_LAB_JOBS or 1)")
    run.add_argument("--out", help="report path without extension (overrides output.path)")
    run.add_argument("--format", help="comma-separated formats: json,csv")
    run.set_defaults(func=_cmd_run)

    orb = sub.add_parser("orbit", help="analyze one orbit")
    orb.add_argument("--model", required=True)
    orb.add_argument("--params", help="model parameters as JSON")
    orb.add_argument("--theta", required=True, help="'x1,x2;v1,v2' (chart models) or a phase t0 (profiles)")
    orb.add_argument("--T", type=float, default=100.0)
    orb.add_argument("--dt", type=float, default=1e-3)
    orb.add_argument("--tol", type=float, default=1e-3)
    orb.add_argument("--checks", help="e.g. 'chain,rigidity,level_set(1)'")
    orb.set_defaults(func=_cmd_orbit)

    cat = sub.add_parser("catalog", help="list the model catalog")
    cat.set_defaults(func=_cmd_catalog)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
