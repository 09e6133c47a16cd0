"""Seeded ensembles of unit tangent vectors, per-orbit analysis and aggregation.

Every sample i draws from its own stream ``PCG64(SeedSequence(seed).spawn(size)[i])``,
so results do not depend on the number of workers or their scheduling.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any

import numpy as np

from . import __version__
from .conformal import growth_estimate_check, homothety_conjugacy_residual
from .config import Check, ExperimentConfig
from .errors import (ConjugatePointError, DomainExit, FrameDrift, NoConvergence, PeriodMapDivergence,
                     SamplerMismatch, Undetermined)
from .integrator import DEFAULT_CONFIG
from .lyapunov import (PeriodicProfile, analyze_orbit, check_inequality_chain, classify_level_set,
                       periodic_orbit_analysis, rigidity_test)
from .models import ChartModel, FlatTorus, HyperbolicPlane, MetricModel, SurfaceOfRevolution, TangentVector

GENERATOR = "numpy PCG64; sample i uses SeedSequence(seed).spawn(size)[i]"
NUMERIC_ERRORS = (NoConvergence, PeriodMapDivergence, DomainExit, FrameDrift)
DEFAULT_PHASE_WINDOW = (0.0, 100.0)
MAX_REJECTIONS = 1_000_000


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(ss)) for ss in np.random.SeedSequence(seed).spawn(n)]


def _unit_velocity(model: ChartModel, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal(model.dim)
    u /= np.linalg.norm(u)
    L = np.linalg.cholesky(model.metric(p))
    return np.linalg.solve(L.T, u)


def sample_unit_tangent(model: MetricModel, n: int, seed: int, sampler: dict[str, Any] | str | None = None
                        ) -> list[TangentVector]:
    """n unit tangent vectors, positions uniform for the Riemannian volume of the window."""
    if isinstance(sampler, str):
        sampler = {"kind": sampler}
    sampler = dict(sampler or {})
    kind = sampler.get("kind", "TorusUniform" if isinstance(model, FlatTorus) else "WindowUniform")
    if kind == "Explicit":
        pts = sampler.get("points") or []
        if len(pts) != n:
            raise SamplerMismatch(f"Explicit sampler lists {len(pts)} points for n={n}")
        if model.chart:
            return [model.to_unit(p["point"], p["v"]) for p in pts]
        return [TangentVector.phase(float(p["t0"])) for p in pts]
    rngs = _streams(seed, n)
    if kind == "TorusUniform":
        if not isinstance(model, FlatTorus):
            raise SamplerMismatch("TorusUniform needs a FlatTorus")
        out = []
        for rng in rngs:
            p = rng.random(model.dim)
            out.append(TangentVector(p, _unit_velocity(model, p, rng)))
        return out
    if kind != "WindowUniform":
        raise SamplerMismatch(f"unknown sampler {kind!r}")
    if not model.chart:
        lo, hi = (sampler.get("box") or [DEFAULT_PHASE_WINDOW])[0]
        return [TangentVector.phase(float(lo + (hi - lo) * rng.random())) for rng in rngs]
    box = np.asarray(sampler.get("box", model.default_box()), dtype=float)
    if box.shape != (model.dim, 2):
        raise SamplerMismatch(f"window must have {model.dim} rows [lo, hi]")
    bound = model.volume_density_bound(box)
    out = []
    for rng in rngs:
        for _ in range(MAX_REJECTIONS):
            p = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(model.dim)
            if rng.random() * bound <= model.volume_density(p):
                break
        else:
            raise SamplerMismatch("rejection sampling failed; window density bound too loose")
        out.append(TangentVector(p, _unit_velocity(model, p, rng)))
    return out


def ensemble_label(model: MetricModel, cfg: ExperimentConfig) -> str:
    kind = cfg.sampler.get("kind")
    if kind == "Explicit":
        return "explicit initial conditions"
    if isinstance(model, (HyperbolicPlane, SurfaceOfRevolution)):
        return "window-restricted ensemble"
    if not model.chart:
        return "phase-window ensemble"
    return "full ensemble"


# -- per-orbit work ------------------------------------------------------------

def _start_curvature(model: MetricModel, theta: TangentVector) -> tuple[float, float]:
    """(Ric at theta, max |sectional curvature| at the base point)."""
    if model.chart:
        k = model.gauss(theta.point)
        return float(k), abs(float(k))
    R = model.at(theta.t0)
    ev = np.linalg.eigvalsh(R)
    return float(np.trace(R) / model.normal_dim), float(np.abs(ev).max())


def _run_check(chk: Check, model, theta, rep, cfg: ExperimentConfig, icfg):
    if chk.name == "chain":
        c = check_inequality_chain(rep, cfg.chain_tol)
        return {"violated": c.violated, "lower_applicable": c.lower_applicable, "lower_gap": c.lower_gap,
                "upper_applicable": c.upper_applicable, "upper_gap": c.upper_gap, "equality": c.equality,
                "strict": c.strict, "note": c.note}
    if chk.name == "rigidity":
        r = rigidity_test(rep)
        return {"lambda_hat": r.lambda_hat, "max_dev": r.max_dev, "scalar": r.scalar,
                "sqrt_ricci_gap": r.sqrt_ricci_gap}
    if chk.name == "level_set":
        try:
            inside = classify_level_set(rep, chk.args[0], cfg.tol)
        except Undetermined:
            inside = None
        return {"alpha": chk.args[0], "in": inside, "slow_rate": rep.unstable.slow_rate}
    if chk.name == "conjugacy":
        if not model.chart:
            return None
        grid = np.arange(1.0, min(10.0, cfg.T) + 0.5)
        return {"r": chk.args[0], "residual": homothety_conjugacy_residual(model, chk.args[0], theta, grid, icfg)}
    if chk.name == "growth":
        g = growth_estimate_check(model, theta, T=min(10.0, cfg.T), C=chk.args[0], lam=chk.args[1], config=icfg)
        return g.as_dict()
    if chk.name == "periodic":
        res = periodic_orbit_analysis(PeriodicProfile(model, chk.args[0]), config=icfg, T_long=cfg.T,
                                      t0=theta.t0)
        return {"tau": chk.args[0], "chi_period": res.chi_period, "chi_long": res.chi_long,
                "discrepancy": res.discrepancy, "iterations": res.iterations}
    raise ValueError(chk.name)


def analyze_sample(cfg: ExperimentConfig, index: int, theta: TangentVector, model: MetricModel | None = None
                   ) -> dict[str, Any]:
    """Orbit record: analysis, requested checks and any error, never raising on numerics."""
    model = model or cfg.build_model()
    icfg = replace(DEFAULT_CONFIG, dt=cfg.dt)
    ric0, kmax = _start_curvature(model, theta)
    rec: dict[str, Any] = {"index": index, "theta": theta.as_dict(), "status": "ok", "error": None,
                           "ricci_at_start": ric0, "max_abs_curvature": kmax, "analysis": None,
                           "checks": {c.label(): None for c in cfg.checks}}
    try:
        rep = analyze_orbit(model, theta, cfg.T, cfg.tol, icfg, cfg.limit_tol, qr=cfg.qr)
        for chk in cfg.checks:
            rec["checks"][chk.label()] = _run_check(chk, model, theta, rep, cfg, icfg)
        rec["analysis"] = rep.to_dict()
    except ConjugatePointError as exc:
        rec["status"] = "conjugate_point"
        rec["error"] = {"type": "ConjugatePointError", "message": str(exc), "t_star": exc.detection.t_star}
    except (*NUMERIC_ERRORS, Undetermined) as exc:
        rec["status"] = "error"
        rec["error"] = {"type": type(exc).__name__, "message": str(exc)}
    return rec


_MODEL_CACHE: dict[str, MetricModel] = {}


def _task(args) -> dict[str, Any]:
    cfg, index, theta = args
    key = cfg.hash()
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = cfg.build_model()
    return analyze_sample(cfg, index, theta, _MODEL_CACHE[key])


# -- aggregation ------------------------------------------------------------------

def _finite(xs):
    return [x for x in xs if x is not None and math.isfinite(x)]


def aggregate(orbits: list[dict[str, Any]], checks: tuple[Check, ...] | list[str]) -> dict[str, Any]:
    """Pure reduction of orbit records into ensemble statistics."""
    labels = [c.label() if isinstance(c, Check) else c for c in checks]
    n = len(orbits)
    ok = [o for o in orbits if o["status"] == "ok"]
    ric0 = [o["ricci_at_start"] for o in orbits]
    ric_t = [o["analysis"]["ricci_avg"]["value"] for o in ok]
    ens_mean = float(np.mean(ric0)) if ric0 else None
    agg: dict[str, Any] = {
        "size": n,
        "status": {s: sum(o["status"] == s for o in orbits) for s in ("ok", "conjugate_point", "error")},
        "errors": sorted({o["error"]["type"] for o in orbits if o["status"] == "error"}),
        "max_abs_curvature": max((o["max_abs_curvature"] for o in orbits), default=None),
        "ricci": {
            "ensemble_mean": ens_mean,
            "time_average_mean": float(np.mean(ric_t)) if ric_t else None,
            "max_orbit_discrepancy": max((abs(ens_mean - r) for r in ric_t), default=None),
        },
        "chi_plus": {
            "mean": float(np.mean([o["analysis"]["chi_plus_riccati"]["value"] for o in ok])) if ok else None,
            "min": min((o["analysis"]["chi_plus_riccati"]["value"] for o in ok), default=None),
            "max": max((o["analysis"]["chi_plus_riccati"]["value"] for o in ok), default=None),
            "slow_rate": sum(o["analysis"]["unstable"]["slow_rate"] for o in ok),
        },
        "checks": {},
    }
    violations = 0
    for lab in labels:
        res = [o["checks"].get(lab) for o in ok]
        res = [r for r in res if r is not None]
        name = lab.split("(")[0]
        if name == "chain":
            violations = sum(r["violated"] for r in res)
            s = {"checked": len(res), "violations": violations, "equality": sum(r["equality"] for r in res),
                 "strict": sum(r["strict"] for r in res),
                 "lower_inapplicable": sum(not r["lower_applicable"] for r in res),
                 "min_upper_gap": min(_finite(r["upper_gap"] for r in res), default=None),
                 "min_lower_gap": min(_finite(r["lower_gap"] for r in res), default=None)}
        elif name == "rigidity":
            s = {"scalar": sum(r["scalar"] for r in res), "non_scalar": sum(not r["scalar"] for r in res)}
            if "chain" in labels:
                pairs = [(o["checks"]["chain"], o["checks"][lab]) for o in ok
                         if o["checks"].get("chain") and o["checks"].get(lab)]
                s["agreement"] = sum(c["equality"] == r["scalar"] for c, r in pairs)
                s["compared"] = len(pairs)
        elif name == "level_set":
            inside = sum(r["in"] is True for r in res)
            s = {"in": inside, "out": sum(r["in"] is False for r in res),
                 "undetermined": sum(r["in"] is None for r in res), "fraction": inside / n if n else None}
        elif name == "conjugacy":
            s = {"checked": len(res), "max_residual": max((r["residual"] for r in res), default=None)}
        elif name == "growth":
            s = {"checked": len(res), "min_lower_slack": min((r["min_lower_slack"] for r in res), default=None),
                 "min_upper_slack": min((r["min_upper_slack"] for r in res), default=None),
                 "exponent_range": [min((r["exponent"] for r in res), default=None),
                                    max((r["exponent"] for r in res), default=None)]}
        else:
            s = {"checked": len(res), "max_discrepancy": max((r["discrepancy"] for r in res), default=None)}
        agg["checks"][lab] = s
    numeric_fail = any(o["status"] == "error" and o["error"]["type"] != "Undetermined" for o in orbits)
    agg["exit_code"] = 1 if violations else (3 if numeric_fail else 0)
    return agg


@dataclass
class EnsembleReport:
    meta: dict[str, Any]
    aggregate: dict[str, Any]
    orbits: list[dict[str, Any]]

    @property
    def exit_code(self) -> int:
        return int(self.aggregate["exit_code"])

    def as_dict(self) -> dict[str, Any]:
        return {"meta": self.meta, "aggregate": self.aggregate, "orbits": self.orbits}


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("RICCATI_LAB_JOBS")
        jobs = int(env) if env else 1
    return max(1, int(jobs))


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None, write: bool = True) -> EnsembleReport:
    """Sample, analyze every orbit (in parallel when jobs > 1), aggregate and optionally write."""
    from .report import determinism_hash, emit_report

    model = cfg.build_model()
    thetas = sample_unit_tangent(model, cfg.size, cfg.seed, cfg.sampler)
    jobs = resolve_jobs(jobs)
    tasks = [(cfg, i, th) for i, th in enumerate(thetas)]
    if jobs == 1 or cfg.size == 1:
        orbits = [analyze_sample(cfg, i, th, model) for _, i, th in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            orbits = list(pool.map(_task, tasks, chunksize=max(1, cfg.size // (4 * jobs))))
    meta = {
        "config": cfg.normalized(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "generator": GENERATOR,
        "code_version": __version__,
        "ensemble": ensemble_label(model, cfg),
        "sample_size": cfg.size,
        "tolerance": cfg.tol,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    report = EnsembleReport(meta, aggregate(orbits, cfg.checks), orbits)
    report.meta["determinism_hash"] = determinism_hash(report)
    if write and cfg.output_path:
        emit_report(report, cfg.formats, cfg.output_path)
    return report
