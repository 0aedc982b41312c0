import csv
import json
import math

import jsonschema
import numpy as np
import pytest

from blowuplab.harness import cli
from blowuplab.harness.config import ConfigError, RunConfig, list_presets
from blowuplab.harness.experiment import (NOT_APPLICABLE, PresetInvalid, check_aggregate, evaluate_rule, lookup,
                                          prepare, rebuild_report, run_experiment, sweep, worker_count)
from blowuplab.harness.report import load_schema, read_report, sanitize

PRESETS = ["grid-refinement", "lambda-sweep", "ode-benchmark", "prop-5.1", "remark-1.2a", "theorem-1.1",
           "theorem-1.2"]

SMALL = """
[experiment]
name = small
[params]
A = 20
[domain]
geometry = interval
a = -1
b = 1
grid_points = 65
boundary = dirichlet
[potential]
form = constant
value = 1
[nonlinearity]
kind = power
param = 2
[initial]
expression = A*(1 - x^2)^2   ; inline comment
[solver]
u_blow = 1e8
[diagnostics.rate]
u_lo = 1e3
u_hi = 1e8
[acceptance]
status = == BlowupDetected
diagnostics.rate.exponent_hat = within 1 0.1
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return run_experiment(RunConfig.from_text(SMALL), out)


class TestConfig:
    def test_presets_shipped(self):
        assert list_presets() == PRESETS

    @pytest.mark.parametrize("name", PRESETS)
    def test_every_preset_validates(self, name):
        cfg = RunConfig.load(name)
        cfg.validate()
        spec, validation, preset = prepare(cfg)
        assert validation["ok"] and all(c["passed"] for c in preset)

    def test_broken_preset_edit_refused(self):
        cfg = RunConfig.load("prop-5.1").with_overrides({"potential.expression": "1 + x^2"})
        with pytest.raises(PresetInvalid, match="nonincreasing_on"):
            prepare(cfg)

    def test_params_feed_expressions(self):
        cfg = RunConfig.from_text(SMALL).with_overrides({"params.A": "2*3"})
        assert cfg.params["A"] == 6.0
        assert cfg.problem().initial_data.max() == pytest.approx(6.0)

    def test_override_drops_sweep(self):
        cfg = RunConfig.load("lambda-sweep")
        assert cfg.sweep_axes
        assert not cfg.with_overrides({"params.lam": "2"}).sweep_axes

    def test_sweep_cells_are_cartesian(self):
        cfg = RunConfig.from_text(SMALL + "[sweep]\nparams.A = 1, 2\ndomain.grid_points = 33, 65, 129\n")
        cells = cfg.sweep_cells()
        assert len(cells) == 6 and cells[0] == {"params.A": "1", "domain.grid_points": "33"}

    @pytest.mark.parametrize("text, match", [
        ("[experiment]\nname = x\n", "missing"),
        (SMALL + "[diagnostics.nonsense]\n", "nonsense"),
        (SMALL + "[sweep]\nnosection = 1, 2\n", "sweep"),
        (SMALL.replace("kind = power", "kind = cubic"), "cubic"),
        (SMALL + "[hypotheses]\nmade_up = yes\n", "made_up"),
    ])
    def test_config_errors(self, text, match):
        with pytest.raises((ConfigError, ValueError), match=match):
            cfg = RunConfig.from_text(text)
            prepare(cfg)

    def test_round_trip_text(self):
        cfg = RunConfig.load("theorem-1.1")
        back = RunConfig.from_text(cfg.to_text())
        assert back.sections == cfg.sections


class TestRules:
    @pytest.mark.parametrize("value, rule, expected", [
        (3.0, "> 2", True), (2.0, "> 2", False), (2.0, ">= 2", True), (1.0, "< 2", True), (2.0, "<= 2", True),
        (2.0, "== 2", True), (2.0, "!= 2", False), (1.04, "within 1 0.05", True), (1.06, "within 1 0.05", False),
        (105.0, "rel 100 0.05", True), (106.0, "rel 100 0.05", False), (True, "true", True), (1, "true", False),
        (False, "false", True), ("BlowupDetected", "== BlowupDetected", True), ("Steady", "!= BlowupDetected", True),
        (None, "> 0", False), (math.nan, "< 1", False),
    ])
    def test_grammar(self, value, rule, expected):
        assert evaluate_rule(value, rule) is expected

    @pytest.mark.parametrize("rule", ["", "~ 3", "within 1", "> 1 2", "< abc"])
    def test_bad_rules(self, rule):
        with pytest.raises(ConfigError):
            evaluate_rule(1.0, rule)

    def test_lookup(self):
        tree = {"a": {"b": {"c": 3}}, "l": [1, 2]}
        assert lookup(tree, "a.b.c") == 3
        with pytest.raises(KeyError):
            lookup(tree, "a.x")

    def test_aggregate_rules(self):
        cfg = RunConfig.from_text(SMALL + "[aggregate]\nT_hat = order 2 0.1\nstatus = all == BlowupDetected\n"
                                  "x = decreasing\n")
        T = [1.0 + 2.0**-(2 * k) for k in range(4)]
        rows = [{"T_hat": t, "status": "BlowupDetected", "x": -t} for t in T]
        checks = {c["column"]: c for c in check_aggregate(cfg, rows)}
        assert checks["T_hat"]["passed"] and "extrapolated 1.0" in checks["T_hat"]["detail"]
        assert checks["status"]["passed"] and not checks["x"]["passed"]


class TestPipeline:
    def test_acceptance_passes(self, small_run):
        assert small_run.passed
        assert small_run.metric("diagnostics.rate.r_squared") > 0.99

    def test_declared_file_set(self, small_run):
        expected = ["blowup_set.csv", "max_series.csv", "profiles.csv", "profiles.gp", "rate_fit.csv", "rate_fit.gp",
                    "report.json", "trajectory/"]
        assert small_run.summary["files"] == expected
        on_disk = sorted(p.name + ("/" if p.is_dir() else "") for p in small_run.out_dir.iterdir())
        assert on_disk == expected

    def test_report_matches_schema(self, small_run):
        doc = json.loads((small_run.out_dir / "report.json").read_text())
        jsonschema.validate(doc, load_schema())
        assert read_report(small_run.out_dir)["name"] == "small"
        assert doc["provenance"]["config"] == RunConfig.from_text(SMALL).to_text()

    def test_csvs_use_round_trip_floats(self, small_run):
        with open(small_run.out_dir / "max_series.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "max_u", "argmax_x", "dt", "steps"]
        assert float(rows[-1][1]) == small_run.trajectory.final.max_u

    def test_rerun_is_byte_identical(self, small_run, tmp_path):
        again = run_experiment(RunConfig.from_text(SMALL), tmp_path)
        for name in small_run.summary["files"]:
            if name.endswith(".csv"):
                assert (tmp_path / name).read_bytes() == (small_run.out_dir / name).read_bytes()

    def test_rebuild_reproduces_summary(self, small_run):
        fresh = sanitize(rebuild_report(small_run.out_dir).summary)
        stored = read_report(small_run.out_dir)
        for key in ("blowup", "diagnostics", "acceptance"):
            assert fresh[key] == stored[key]

    def test_not_applicable_without_blowup(self, tmp_path):
        cfg = RunConfig.from_text(SMALL).with_overrides({"params.A": "0.01", "solver.horizon": "2"})
        rep = run_experiment(cfg, tmp_path)
        assert rep.summary["status"] != "BlowupDetected"
        assert NOT_APPLICABLE in rep.diagnostic("rate")
        assert not rep.passed
        jsonschema.validate(json.loads((tmp_path / "report.json").read_text()), load_schema())


class TestSweep:
    def test_failed_cell_recorded(self, tmp_path):
        cfg = RunConfig.from_text(SMALL + "[sweep]\ndomain.grid_points = 65, 4\n"
                                  "[aggregate]\nstatus = all == BlowupDetected\n")
        res = sweep(cfg, tmp_path, workers=1)
        assert len(res.rows) == 2
        assert res.rows[0]["error"] == "" and res.rows[1]["error"]
        assert not res.passed
        with open(res.aggregate_csv) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 and rows[1]["error"]
        assert (tmp_path / "cell_000" / "report.json").exists()

    def test_parallel_matches_serial(self, tmp_path):
        cfg = RunConfig.from_text(SMALL + "[sweep]\nparams.A = 20, 40\n")
        a = sweep(cfg, tmp_path / "a", workers=1)
        b = sweep(cfg, tmp_path / "b", workers=2)
        assert [r["T_hat"] for r in a.rows] == [r["T_hat"] for r in b.rows]
        assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("BLOWUPLAB_WORKERS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("BLOWUPLAB_WORKERS", "0")
        with pytest.raises(ValueError):
            worker_count()


def test_sanitize():
    doc = sanitize({"a": math.nan, "b": math.inf, "c": -math.inf, "d": np.float64(1.5), "e": np.bool_(True),
                    "f": np.arange(2), 3: (1, 2)})
    assert doc == {"a": None, "b": "inf", "c": "-inf", "d": 1.5, "e": True, "f": [0, 1], "3": [1, 2]}
    json.dumps(doc, allow_nan=False)


class TestCLI:
    def run(self, capsys, *argv):
        code = cli.main(list(argv))
        out = capsys.readouterr().out
        return code, (json.loads(out) if out.strip().startswith("{") else out)

    def test_presets(self, capsys):
        code, out = self.run(capsys, "presets")
        assert code == 0 and all(p in out for p in PRESETS)

    def test_run_and_report(self, capsys, tmp_path):
        path = tmp_path / "small.ini"
        path.write_text(SMALL)
        code, doc = self.run(capsys, "run", str(path), "--out", str(tmp_path / "o"), "--set", "params.A=30")
        assert code == 0 and doc["passed"]
        code, doc = self.run(capsys, "report", str(tmp_path / "o"), "--rebuild")
        assert code == 0 and all(doc["reproduced"].values())

    def test_failing_acceptance_exit_code(self, capsys, tmp_path):
        path = tmp_path / "small.ini"
        path.write_text(SMALL.replace("within 1 0.1", "within 3 0.1"))
        code, doc = self.run(capsys, "run", str(path))
        assert code == 1 and not doc["passed"]

    def test_config_error_exit_code(self, capsys, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nname = bad\n")
        assert cli.main(["run", str(path)]) == 2
        assert "config error" in capsys.readouterr().err
        assert cli.main(["run", "theorem-1.2", "--set", "nonsense"]) == 2

    def test_missing_report_exit_code(self, capsys, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == 2

    def test_checks(self, capsys):
        code, doc = self.run(capsys, "check", "ode")
        assert code == 0 and doc["passed"]
        code, doc = self.run(capsys, "check", "cutoff", "--l", "2", "--sigma", "1.9")
        assert code == 1 and "|Lap phi^2|" in doc["reason"]
        code, doc = self.run(capsys, "check", "threshold", "--eps", "0.2", "--C-eps", "0.05", "--tau0", "1")
        assert code == 1 and doc["margin"] < 0
        for name in ("heat-kernel", "rescaled-f", "local-bound"):
            assert self.run(capsys, "check", name)[0] == 0

    def test_zeroset(self, capsys, tmp_path):
        x = np.linspace(-1, 1, 4096).tolist()
        path = tmp_path / "v.csv"
        path.write_text("x,V\n" + "".join(f"{a!r},{a * a!r}\n" for a in x))
        code, doc = self.run(capsys, "zeroset", str(path), "0", "--out", str(tmp_path / "m.csv"))
        assert code == 0 and doc["m"] == 2 and doc["nesting_holds"]
        assert abs(doc["eta"] - 0.5) < 0.01
        path.write_text("x,V\n" + "".join(f"{a!r},{max(a, 0.0) ** 2!r}\n" for a in x))
        code, doc = self.run(capsys, "zeroset", str(path), "-0.5")
        assert code == 1 and doc["exploratory"]
        path.write_text("x,V\n0,0\n")
        assert cli.main(["zeroset", str(path), "0"]) == 2
