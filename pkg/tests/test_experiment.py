import csv
import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from riccati_lab import cli
from riccati_lab.config import Check, parse_config
from riccati_lab.errors import ConfigError, SamplerMismatch
from riccati_lab.experiment import aggregate, resolve_jobs, run_experiment, sample_unit_tangent
from riccati_lab.models import ConstantCurvatureSpace, FlatTorus, HyperbolicPlane
from riccati_lab.report import CSV_COLUMNS, determinism_hash, dumps, emit_report, to_csv


def cfg(**over):
    doc = {"model": {"name": "HyperbolicPlane"}, "ensemble": {"size": 4, "seed": 5},
           "horizons": {"T": 20.0, "dt": 1e-3}, "checks": ["chain", "rigidity", "level_set(1)"]}
    doc.update(over)
    return parse_config(doc)


class TestConfig:
    @pytest.mark.parametrize("doc,path", [
        ({}, "model"),
        ({"model": {"name": "Klein"}}, "model.name"),
        ({"model": {"name": "RoundSphere", "params": {"radius": 1, "k": 2}}}, "model.params"),
        ({"model": {"name": "FlatTorus"}, "ensemble": {"size": 0}}, "ensemble.size"),
        ({"model": {"name": "FlatTorus"}, "ensemble": {"seed": -1}}, "ensemble.seed"),
        ({"model": {"name": "HyperbolicPlane"}, "ensemble": {"sampler": {"kind": "TorusUniform"}}},
         "ensemble.sampler.kind"),
        ({"model": {"name": "HyperbolicPlane"}, "ensemble": {"sampler": {"kind": "WindowUniform", "box": [[0, 1]]}}},
         "ensemble.sampler.box"),
        ({"model": {"name": "FlatTorus"}, "horizons": {"T": 1.0, "dt": 2.0}}, "horizons.dt"),
        ({"model": {"name": "FlatTorus"}, "checks": ["entropy"]}, "checks[0]"),
        ({"model": {"name": "FlatTorus"}, "checks": ["chain", "level_set"]}, "checks[1]"),
        ({"model": {"name": "FlatTorus"}, "checks": ["periodic(6.28)"]}, "checks[0]"),
        ({"model": {"name": "FlatTorus"}, "output": {"format": ["xml"]}}, "output.format"),
        ({"model": {"name": "FlatTorus"}, "extra": 1}, "extra"),
    ])
    def test_errors_name_field(self, doc, path):
        with pytest.raises(ConfigError) as exc:
            parse_config(doc)
        assert exc.value.path == path

    def test_check_forms(self):
        c = parse_config({"model": {"name": "ConstantCurvatureSpace"},
                          "checks": ["level_set(0.5)", {"conjugacy": 0.7}, {"growth": {"C": 1.0, "lambda": None}},
                                     "growth(null, 0.3)", {"periodic": 2.0}]})
        assert c.checks == (Check("level_set", (0.5,)), Check("conjugacy", (0.7,)), Check("growth", (1.0, None)),
                            Check("growth", (None, 0.3)), Check("periodic", (2.0,)))

    def test_hash_ignores_output(self):
        a = cfg(output={"path": "a"})
        b = cfg(output={"path": "b", "format": "csv"})
        assert a.hash() == b.hash() != cfg(ensemble={"size": 4, "seed": 6}).hash()


class TestSampler:
    def test_torus_reproducible(self):
        a = sample_unit_tangent(FlatTorus(2), 4, 7, "TorusUniform")
        b = sample_unit_tangent(FlatTorus(2), 4, 7, "TorusUniform")
        assert len(a) == 4
        for x, y in zip(a, b):
            assert x.point.tobytes() == y.point.tobytes() and x.v.tobytes() == y.v.tobytes()
            assert np.linalg.norm(x.v) == pytest.approx(1.0, abs=1e-12)

    def test_prefix_stable(self):
        """Stream splitting by index: sample i does not depend on the ensemble size."""
        a = sample_unit_tangent(HyperbolicPlane(), 3, 11)
        b = sample_unit_tangent(HyperbolicPlane(), 8, 11)
        assert all(np.array_equal(x.point, y.point) for x, y in zip(a, b))

    def test_window_density(self):
        H = HyperbolicPlane()
        th = sample_unit_tangent(H, 1000, 3, {"kind": "WindowUniform", "box": [[-1, 1], [1, 2]]})
        pts = np.array([t.point for t in th])
        for t in th[:50]:
            assert t.v @ H.metric(t.point) @ t.v == pytest.approx(1.0, abs=1e-12)
        edges = np.linspace(1, 2, 11)
        counts, _ = np.histogram(pts[:, 1], edges)
        mass = (1 / edges[:-1] - 1 / edges[1:]) / 0.5
        assert stats.chisquare(counts, 1000 * mass).pvalue > 0.01
        counts, _ = np.histogram(pts[:, 0], np.linspace(-1, 1, 9))
        assert stats.chisquare(counts).pvalue > 0.01

    def test_explicit(self):
        th = sample_unit_tangent(HyperbolicPlane(), 1, 0, {"kind": "Explicit",
                                                          "points": [{"point": [0, 2], "v": [3, 0]}]})
        np.testing.assert_allclose(th[0].v, [2.0, 0.0])

    def test_mismatch(self):
        with pytest.raises(SamplerMismatch):
            sample_unit_tangent(HyperbolicPlane(), 2, 0, "TorusUniform")

    def test_phases(self):
        th = sample_unit_tangent(ConstantCurvatureSpace(3, -1.0), 5, 1, {"kind": "WindowUniform", "box": [[2, 3]]})
        assert all(2 <= t.t0 <= 3 and t.point is None for t in th)


class TestRun:
    def test_half_plane(self, warm):
        rep = run_experiment(cfg(ensemble={"size": 16, "seed": 1}, horizons={"T": 100.0, "dt": 1e-3}), write=False)
        agg = rep.aggregate
        assert agg["checks"]["level_set(1)"]["fraction"] == 1.0
        assert agg["checks"]["rigidity"]["scalar"] == 16 and agg["checks"]["chain"]["equality"] == 16
        assert rep.exit_code == 0 and rep.meta["ensemble"] == "window-restricted ensemble"

    def test_flat_torus(self):
        c = parse_config({"model": {"name": "FlatTorus"}, "ensemble": {"size": 100, "seed": 2},
                          "horizons": {"T": 20.0, "dt": 0.05}, "analysis": {"qr": False}, "checks": ["level_set(0)"]})
        agg = run_experiment(c, write=False).aggregate
        assert agg["checks"]["level_set(0)"]["fraction"] == 1.0
        assert agg["chi_plus"]["slow_rate"] == 100 and agg["max_abs_curvature"] == 0.0

    def test_variable_profile(self):
        c = parse_config({"model": {"name": "RandomProfile", "params": {"dim": 3, "seed": 4}},
                          "ensemble": {"size": 4, "seed": 1}, "horizons": {"T": 300.0, "dt": 0.01},
                          "checks": ["chain"]})
        agg = run_experiment(c, write=False).aggregate["checks"]["chain"]
        assert agg["violations"] == 0 and agg["strict"] == 4

    def test_ensemble_vs_time_average(self):
        c = parse_config({"model": {"name": "ConstantCurvatureSpace", "params": {"n": 3, "K": -2.0}},
                          "ensemble": {"size": 6, "seed": 1}, "horizons": {"T": 20.0, "dt": 0.01}})
        agg = run_experiment(c, write=False).aggregate
        assert agg["ricci"]["max_orbit_discrepancy"] < 1e-9

    def test_sphere_records_conjugate_points(self):
        c = parse_config({"model": {"name": "RoundSphere"}, "ensemble": {"size": 3, "seed": 1},
                          "horizons": {"T": 10.0, "dt": 1e-3}, "checks": ["chain"]})
        rep = run_experiment(c, write=False)
        assert rep.aggregate["status"]["conjugate_point"] == 3 and rep.exit_code == 0
        assert all(o["checks"]["chain"] is None for o in rep.orbits)

    def test_numeric_error_recorded(self):
        c = parse_config({"model": {"name": "SurfaceOfRevolution", "params": {"u_max": 3.0}},
                          "ensemble": {"size": 2, "seed": 1}, "horizons": {"T": 50.0, "dt": 1e-3}})
        rep = run_experiment(c, write=False)
        assert rep.aggregate["status"]["error"] == 2 and rep.exit_code == 3
        assert rep.orbits[0]["error"]["type"] == "DomainExit"

    def test_empty_checks(self):
        rep = run_experiment(cfg(checks=[], ensemble={"size": 2, "seed": 1}), write=False)
        assert rep.aggregate["checks"] == {} and all(o["checks"] == {} for o in rep.orbits)

    def test_aggregate_recomputable(self):
        c = cfg(checks=["chain", "rigidity", "level_set(1)", "level_set(0.5)", "conjugacy(0.5)", "growth"])
        rep = run_experiment(c, write=False)
        assert aggregate(rep.orbits, c.checks) == rep.aggregate

    def test_jobs_do_not_change_results(self):
        c = cfg(ensemble={"size": 6, "seed": 9})
        a = run_experiment(c, jobs=1, write=False)
        b = run_experiment(c, jobs=2, write=False)
        assert a.meta["determinism_hash"] == b.meta["determinism_hash"]


@pytest.fixture(scope="module")
def report():
    return run_experiment(cfg(checks=["chain", "rigidity", "level_set(1)", "growth"]), write=False)


class TestReport:
    def test_json_round_trip(self, report, tmp_path):
        path, = emit_report(report, "json", tmp_path / "r")
        text = path.read_text()
        assert dumps(json.loads(text)) == text
        assert set(json.loads(text)) == {"meta", "aggregate", "orbits"}

    def test_seventeen_digits(self):
        assert dumps({"x": 0.1}) == '{\n "x": 0.10000000000000001\n}\n'
        assert dumps([math.nan, math.inf]) == "[null, null]\n"

    def test_csv(self, report, tmp_path):
        path, = emit_report(report, ["csv"], tmp_path / "r.csv")
        rows = list(csv.reader(io.StringIO(path.read_text())))
        assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 1 + report.aggregate["size"]
        assert to_csv(report).splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_hash_excludes_timestamp(self, report):
        d = json.loads(dumps(report.as_dict()))
        d["meta"]["timestamp"] = "1970-01-01T00:00:00+00:00"
        assert determinism_hash(d) == report.meta["determinism_hash"]
        d["orbits"][0]["index"] = 99
        assert determinism_hash(d) != report.meta["determinism_hash"]

    def test_atomic_write_leaves_no_temp(self, report, tmp_path):
        emit_report(report, ["json", "csv"], tmp_path / "sub" / "r")
        assert sorted(p.name for p in (tmp_path / "sub").iterdir()) == ["r.csv", "r.json"]


class TestCli:
    def _write(self, tmp_path, doc):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(doc))
        return str(p)

    def test_run(self, tmp_path, capsys):
        path = self._write(tmp_path, {"model": {"name": "HyperbolicPlane"}, "ensemble": {"size": 2, "seed": 1},
                                      "horizons": {"T": 10.0}, "checks": ["chain"],
                                      "output": {"path": str(tmp_path / "out"), "format": ["json", "csv"]}})
        assert cli.main(["run", path]) == 0
        assert (tmp_path / "out.json").exists() and (tmp_path / "out.csv").exists()
        assert "determinism hash" in capsys.readouterr().out

    def test_validate(self, tmp_path, capsys):
        assert cli.main(["validate", self._write(tmp_path, {"model": {"name": "FlatTorus"}})]) == 0
        assert cli.main(["validate", self._write(tmp_path, {"model": {"name": "X"}})]) == 2
        assert "model.name" in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert cli.main(["validate", str(p)]) == 2

    def test_orbit(self, capsys):
        assert cli.main(["orbit", "--model", "HyperbolicPlane", "--theta", "0,1;0.6,0.8", "--T", "20",
                         "--checks", "chain,level_set(1)"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["checks"]["level_set(1)"]["in"] is True

    def test_orbit_profile(self, capsys):
        assert cli.main(["orbit", "--model", "ConstantCurvatureSpace", "--params", '{"n": 3, "K": -4}',
                         "--theta", "0.5", "--T", "10", "--dt", "0.01"]) == 0
        assert json.loads(capsys.readouterr().out)["analysis"]["chi_plus_riccati"]["value"] == pytest.approx(4.0)

    def test_orbit_bad_theta(self):
        assert cli.main(["orbit", "--model", "HyperbolicPlane", "--theta", "0,-1;1,0"]) == 2

    def test_catalog(self, capsys):
        assert cli.main(["catalog"]) == 0
        assert "HyperbolicPlane" in capsys.readouterr().out

    def test_jobs_env(self, monkeypatch):
        monkeypatch.setenv("RICCATI_LAB_JOBS", "3")
        assert resolve_jobs(None) == 3 and resolve_jobs(2) == 2
        monkeypatch.delenv("RICCATI_LAB_JOBS")
        assert resolve_jobs(None) == 1
