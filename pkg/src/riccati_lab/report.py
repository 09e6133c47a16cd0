"""JSON and CSV serialization of ensemble reports.

Floats are written with 17 significant digits and non-finite values as
null, so a parsed report re-emits byte-identically.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable

import numpy as np

CSV_COLUMNS = (
    "index", "status", "error", "t0", "point", "velocity",
    "chi_plus", "chi_converged", "chi_spread", "qr_max", "qr_min",
    "ricci_avg", "gamma_plus", "gamma_minus", "slow_rate",
    "chain_lower_gap", "chain_upper_gap", "chain_violated", "chain_equality", "chain_strict",
    "rigidity_lambda", "rigidity_max_dev", "rigidity_scalar",
    "level_sets", "conjugacy_max_residual", "growth_exponent", "growth_min_lower_slack",
    "growth_min_upper_slack", "periodic_discrepancy",
)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _encode(obj, out: list[str], indent: int, level: int) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, float):
        out.append(_fmt(obj))
    elif isinstance(obj, (int, str)):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append(("," if i else "") + pad + json.dumps(k) + ": ")
            _encode(v, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list)) for v in obj):
            parts: list[str] = []
            for i, v in enumerate(obj):
                parts.append(", " if i else "")
                _encode(v, parts, indent, level + 1)
            out.append("[" + "".join(parts) + "]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            out.append(("," if i else "") + pad)
            _encode(v, out, indent, level + 1)
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 1) -> str:
    out: list[str] = []
    _encode(_plain(obj), out, indent, 0)
    return "".join(out) + "\n"


def _as_dict(report) -> dict[str, Any]:
    return report.as_dict() if hasattr(report, "as_dict") else report


def determinism_hash(report) -> str:
    """sha256 of the report with the timestamp (and the hash itself) removed."""
    d = _plain(_as_dict(report))
    meta = {k: v for k, v in d["meta"].items() if k not in ("timestamp", "determinism_hash")}
    return hashlib.sha256(dumps({**d, "meta": meta}).encode()).hexdigest()


def _get(d, *keys):
    for k in keys:
        if d is None:
            return None
        d = d.get(k) if isinstance(d, dict) else None
    return d


def _first(checks: dict, prefix: str) -> list[dict]:
    return [v for k, v in checks.items() if k.split("(")[0] == prefix and v is not None]


def csv_row(orbit: dict[str, Any]) -> list[str]:
    a = orbit.get("analysis")
    checks = orbit.get("checks") or {}
    th = orbit["theta"]
    qr = _get(a, "chi_spectrum_qr")
    chain = _first(checks, "chain")
    rig = _first(checks, "rigidity")
    conj = _first(checks, "conjugacy")
    growth = _first(checks, "growth")
    per = _first(checks, "periodic")
    levels = " ".join(f"{k}={'null' if v['in'] is None else str(v['in']).lower()}"
                      for k, v in checks.items() if k.startswith("level_set") and v is not None)
    vals = [
        orbit["index"], orbit["status"], _get(orbit, "error", "type"), th.get("t0"),
        None if th.get("point") is None else " ".join(_fmt(x) for x in th["point"]),
        None if th.get("v") is None else " ".join(_fmt(x) for x in th["v"]),
        _get(a, "chi_plus_riccati", "value"), _get(a, "chi_plus_riccati", "converged"),
        None if a is None else max(a["chi_plus_riccati"]["window_values"]) - min(a["chi_plus_riccati"]["window_values"]),
        None if not qr else qr[0], None if not qr else qr[-1],
        _get(a, "ricci_avg", "value"), _get(a, "gamma_plus"), _get(a, "gamma_minus"),
        _get(a, "unstable", "slow_rate"),
        chain[0]["lower_gap"] if chain else None, chain[0]["upper_gap"] if chain else None,
        chain[0]["violated"] if chain else None, chain[0]["equality"] if chain else None,
        chain[0]["strict"] if chain else None,
        rig[0]["lambda_hat"] if rig else None, rig[0]["max_dev"] if rig else None,
        rig[0]["scalar"] if rig else None,
        levels or None,
        max(c["residual"] for c in conj) if conj else None,
        growth[0]["exponent"] if growth else None, growth[0]["min_lower_slack"] if growth else None,
        growth[0]["min_upper_slack"] if growth else None,
        max(p["discrepancy"] for p in per) if per else None,
    ]
    out = []
    for v in vals:
        if v is None or (isinstance(v, float) and not math.isfinite(v)):
            out.append("")
        elif isinstance(v, bool):
            out.append(str(v).lower())
        elif isinstance(v, float):
            out.append(_fmt(v))
        else:
            out.append(str(v))
    return out


def to_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for o in _as_dict(report)["orbits"]:
        w.writerow(csv_row(o))
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(report, formats: Iterable[str] | str, path: str | os.PathLike) -> list[Path]:
    """Write ``<path>.json`` / ``<path>.csv`` atomically; returns the written paths."""
    formats = [formats] if isinstance(formats, str) else list(formats)
    base = Path(path)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    written = []
    for fmt in formats:
        if fmt == "json":
            target, text = base.with_suffix(".json"), dumps(_as_dict(report))
        elif fmt == "csv":
            target, text = base.with_suffix(".csv"), to_csv(report)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        _atomic_write(target, text)
        written.append(target)
    return written
