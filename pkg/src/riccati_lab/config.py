"""Experiment configuration: a JSON document validated into :class:`ExperimentConfig`.

Grammar (all sections except ``model`` optional)::

    {
      "model":     {"name": "HyperbolicPlane", "params": {}},
      "ensemble":  {"size": 16, "seed": 1,
                    "sampler": {"kind": "WindowUniform", "box": [[-1, 1], [1, 2]]}},
      "horizons":  {"T": 100.0, "dt": 0.001, "tol": 0.001, "limit_tol": 1e-8},
      "analysis":  {"qr": true, "chain_tol": 0.001},
      "checks":    ["chain", "rigidity", "level_set(1)", {"growth": {"C": null, "lambda": null}}],
      "output":    {"path": "reports/run", "format": ["json", "csv"]}
    }

Sampler kinds: ``TorusUniform`` (FlatTorus only), ``WindowUniform`` with a
coordinate box (for frame-based models a 1x2 box of phases), ``Explicit``
with ``points``: a list of ``{"point": [...], "v": [...]}`` or ``{"t0": ...}``.
Checks: ``chain``, ``rigidity``, ``level_set(alpha)``, ``conjugacy(r)``,
``growth(C, lambda)`` (either may be null), ``periodic(tau)``.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .models import CATALOG, build_model

CHECKS = ("chain", "rigidity", "level_set", "conjugacy", "growth", "periodic")
SAMPLERS = ("TorusUniform", "WindowUniform", "Explicit")
FORMATS = ("json", "csv")
_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$")


@dataclass(frozen=True)
class Check:
    name: str
    args: tuple = ()

    def label(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({', '.join('null' if a is None else f'{a:g}' for a in self.args)})"


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str
    model_params: dict[str, Any]
    size: int = 1
    seed: int = 0
    sampler: dict[str, Any] = field(default_factory=dict)
    T: float = 100.0
    dt: float = 1e-3
    tol: float = 1e-3
    limit_tol: float = 1e-8
    qr: bool = True
    chain_tol: float = 1e-3
    checks: tuple[Check, ...] = ()
    output_path: str | None = None
    formats: tuple[str, ...] = ("json",)

    def normalized(self) -> dict[str, Any]:
        d = asdict(self)
        d["checks"] = [c.label() for c in self.checks]
        d["formats"] = list(self.formats)
        return d

    def hash(self) -> str:
        d = self.normalized()
        d.pop("output_path")
        d.pop("formats")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_model(self):
        return build_model(self.model_name, self.model_params)


def _num(v, path: str, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(path, "must be positive")
    return float(v)


def _section(doc: dict, key: str) -> dict:
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected an object")
    return sec


def _unknown(sec: dict, allowed, path: str) -> None:
    extra = sorted(set(sec) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def parse_check(item, path: str) -> Check:
    if isinstance(item, str):
        mt = _CALL.match(item)
        if not mt:
            raise ConfigError(path, f"cannot parse check {item!r}")
        name, raw = mt.group(1), mt.group(2)
        args = []
        for tok in (raw.split(",") if raw and raw.strip() else []):
            tok = tok.strip()
            if tok in ("null", "None", ""):
                args.append(None)
            else:
                try:
                    args.append(float(tok))
                except ValueError:
                    raise ConfigError(path, f"bad argument {tok!r}") from None
    elif isinstance(item, dict) and len(item) == 1:
        name, val = next(iter(item.items()))
        if isinstance(val, dict):
            keys = {"growth": ("C", "lambda")}.get(name, ())
            _unknown(val, keys, f"{path}.{name}")
            args = [val.get(k) for k in keys]
        elif isinstance(val, list):
            args = list(val)
        else:
            args = [val]
    else:
        raise ConfigError(path, f"cannot parse check {item!r}")
    if name not in CHECKS:
        raise ConfigError(path, f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    arity = {"chain": (0, 0), "rigidity": (0, 0), "level_set": (1, 1), "conjugacy": (1, 1),
             "growth": (0, 2), "periodic": (1, 1)}[name]
    if not arity[0] <= len(args) <= arity[1]:
        raise ConfigError(path, f"{name} takes {arity[0]}..{arity[1]} arguments, got {len(args)}")
    clean = []
    for i, a in enumerate(args):
        if a is None and name == "growth":
            clean.append(None)
        else:
            clean.append(_num(a, f"{path}[{i}]", positive=name in ("periodic",)))
    if name == "growth":
        clean += [None] * (2 - len(clean))
    return Check(name, tuple(clean))


def parse_config(doc: Any) -> ExperimentConfig:
    """Validate a decoded JSON document; errors name the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected an object")
    _unknown(doc, ("model", "ensemble", "horizons", "analysis", "checks", "output"), "")
    model = doc.get("model")
    if not isinstance(model, dict):
        raise ConfigError("model", "required object with a 'name'")
    _unknown(model, ("name", "params"), "model")
    name = model.get("name")
    if name not in CATALOG:
        raise ConfigError("model.name", f"unknown model {name!r}; catalog: {', '.join(sorted(CATALOG))}")
    params = model.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("model.params", "expected an object")
    try:
        built = build_model(name, params)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("model.params", str(exc)) from None

    ens = _section(doc, "ensemble")
    _unknown(ens, ("size", "seed", "sampler"), "ensemble")
    size = ens.get("size", 1)
    if isinstance(size, bool) or not isinstance(size, int) or size < 1:
        raise ConfigError("ensemble.size", "must be an integer >= 1")
    seed = ens.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("ensemble.seed", "must be an integer in [0, 2^64)")
    sampler = dict(ens.get("sampler") or {})
    kind = sampler.get("kind", "TorusUniform" if name == "FlatTorus" else "WindowUniform")
    if kind not in SAMPLERS:
        raise ConfigError("ensemble.sampler.kind", f"choose from {', '.join(SAMPLERS)}")
    sampler["kind"] = kind
    _unknown(sampler, ("kind", "box", "points"), "ensemble.sampler")
    if kind == "TorusUniform" and name != "FlatTorus":
        raise ConfigError("ensemble.sampler.kind", "TorusUniform applies to FlatTorus only")
    if kind == "WindowUniform" and "box" in sampler:
        box = sampler["box"]
        want = built.dim if built.chart else 1
        if (not isinstance(box, list) or len(box) != want
                or any(not isinstance(r, list) or len(r) != 2 for r in box)):
            raise ConfigError("ensemble.sampler.box", f"expected {want} [lo, hi] rows")
        for i, (lo, hi) in enumerate(box):
            if not _num(lo, f"ensemble.sampler.box[{i}][0]") < _num(hi, f"ensemble.sampler.box[{i}][1]"):
                raise ConfigError(f"ensemble.sampler.box[{i}]", "lo must be < hi")
    if kind == "Explicit":
        pts = sampler.get("points")
        if not isinstance(pts, list) or not pts:
            raise ConfigError("ensemble.sampler.points", "expected a non-empty list")
        for i, p in enumerate(pts):
            keys = ("point", "v") if built.chart else ("t0",)
            if not isinstance(p, dict) or any(k not in p for k in keys):
                raise ConfigError(f"ensemble.sampler.points[{i}]", f"expected keys {keys}")
        if len(pts) != size:
            raise ConfigError("ensemble.size", f"Explicit sampler lists {len(pts)} points")

    hz = _section(doc, "horizons")
    _unknown(hz, ("T", "dt", "tol", "limit_tol"), "horizons")
    T = _num(hz.get("T", 100.0), "horizons.T", True)
    dt = _num(hz.get("dt", 1e-3), "horizons.dt", True)
    if not dt < T:
        raise ConfigError("horizons.dt", "must be smaller than T")
    tol = _num(hz.get("tol", 1e-3), "horizons.tol", True)
    limit_tol = _num(hz.get("limit_tol", 1e-8), "horizons.limit_tol", True)

    an = _section(doc, "analysis")
    _unknown(an, ("qr", "chain_tol"), "analysis")
    qr = an.get("qr", True)
    if not isinstance(qr, bool):
        raise ConfigError("analysis.qr", "expected true or false")
    chain_tol = _num(an.get("chain_tol", 1e-3), "analysis.chain_tol", True)

    raw_checks = doc.get("checks", [])
    if not isinstance(raw_checks, list):
        raise ConfigError("checks", "expected a list")
    checks = tuple(parse_check(c, f"checks[{i}]") for i, c in enumerate(raw_checks))
    for i, c in enumerate(checks):
        if c.name == "periodic" and built.chart:
            raise ConfigError(f"checks[{i}]", "periodic applies to frame-based profiles only")

    out = _section(doc, "output")
    _unknown(out, ("path", "format"), "output")
    path = out.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path", "expected a string")
    fmts = out.get("format", ["json"])
    fmts = [fmts] if isinstance(fmts, str) else fmts
    if not isinstance(fmts, list) or any(f not in FORMATS for f in fmts):
        raise ConfigError("output.format", f"choose from {', '.join(FORMATS)}")
    return ExperimentConfig(name, dict(params), size, seed, sampler, T, dt, tol, limit_tol, qr, chain_tol,
                            checks, path, tuple(fmts))


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc)
