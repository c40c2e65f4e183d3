import io as stdio
import json
import math
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from jumpou import io
from jumpou.cli import main, parse_delta_rule, read_config_file, UsageError
from jumpou.core import ModelParams
from jumpou.density import jump_posterior, log_density_grad

UNIT = ["--theta", "1", "--sigma", "1", "--lambda", "1"]
UNIT0 = ["--theta0", "1", "--sigma0", "1", "--lambda0", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


class TestSimulate:
    def test_writes_rows_and_is_deterministic(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for target in (a, b):
            code, out, _ = run(capsys, "simulate", *UNIT, "--n", 50, "--delta", 0.1, "--seed", 7, "--out", target)
            assert code == 0
        lines = a.read_text().splitlines()
        assert lines[0] == "t,x" and len(lines) == 52
        assert a.read_bytes() == b.read_bytes()
        assert "n=50" in out and "seed=7" in out and "lambda*delta=0.10000000000000001" in out

    def test_jumps_file(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", *UNIT, "--n", 200, "--delta", 0.1, "--seed", 7,
                           "--out", tmp_path / "p.csv", "--jumps-out", tmp_path / "j.csv")
        assert code == 0
        rows = (tmp_path / "j.csv").read_text().splitlines()
        assert rows[0] == "k,s"
        assert f"jumps={len(rows) - 1}" in out
        for row in rows[1:]:
            k, s = row.split(",")
            assert int(k) * 0.1 < float(s) < (int(k) + 1) * 0.1 + 1e-12

    def test_negative_theta(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--theta", -1, "--sigma", 1, "--lambda", 1,
                           "--n", 10, "--delta", 0.1, "--seed", 1, "--out", tmp_path / "x.csv")
        assert code == 1 and "theta" in err

    def test_unwritable_path(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", *UNIT, "--n", 10, "--delta", 0.1, "--seed", 1,
                         "--out", tmp_path / "missing" / "x.csv")
        assert code == 2

    def test_delta_out_of_range(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", *UNIT, "--n", 10, "--delta", 2, "--seed", 1, "--out", tmp_path / "x.csv")
        assert code == 1 and "delta" in err


class TestDensity:
    def test_lower_bound_at_no_jump_mean(self, capsys):
        mean = -(1 - math.exp(-0.1))
        rep = run_json(capsys, "density", *UNIT, "--delta", 0.1, "--x", 0, "--y", mean)
        assert rep["p"] >= math.exp(-0.1) * 1.3251437678112737 * (1 - 1e-12)
        assert rep["logp"] == pytest.approx(math.log(rep["p"]), rel=1e-15)
        assert rep["J"] >= 1

    def test_grad_and_posterior_match_library(self, capsys):
        rep = run_json(capsys, "density", *UNIT, "--delta", 0.1, "--x", 0.3, "--y", 1.2, "--grad", "--posterior")
        p = ModelParams(1.0, 1.0, 1.0)
        assert rep["grad"] == log_density_grad(p, 0.1, 0.3, 1.2).tolist()
        assert rep["posterior"] == jump_posterior(p, 0.1, 0.3, 1.2).probabilities.tolist()
        assert sum(rep["posterior"]) == pytest.approx(1.0, abs=1e-10)

    def test_jmax(self, capsys):
        rep = run_json(capsys, "density", *UNIT, "--delta", 0.1, "--x", 0, "--y", 0, "--jmax", 2, "--posterior")
        assert rep["J"] == 2 and len(rep["posterior"]) == 3

    def test_bad_sigma(self, capsys):
        code, _, err = run(capsys, "density", "--theta", 1, "--sigma", 0, "--lambda", 1, "--delta", 0.1, "--x", 0, "--y", 0)
        assert code == 1 and "--sigma" in err


@pytest.fixture(scope="module")
def simulated_csv(tmp_path_factory):
    target = tmp_path_factory.mktemp("fit") / "path.csv"
    assert main(["simulate", "--theta", "1", "--sigma", "0.5", "--lambda", "2", "--n", "5000",
                 "--delta", "0.05", "--seed", "20240", "--out", str(target)]) == 0
    return target


class TestFit:
    def test_round_trip(self, capsys, simulated_csv):
        rep = run_json(capsys, "fit", "--input", simulated_csv, "--delta", 0.05)
        assert rep["converged"]
        est = rep["estimate"]
        truth = {"theta": 1.0, "sigma": 0.5, "lambda": 2.0}
        for k, se in zip(("theta", "sigma", "lambda"), rep["stderr"]):
            assert abs(est[k] - truth[k]) <= 3 * se
        jsonschema.validate(rep, io.load_schema("fit"))

    def test_non_convergence_is_not_an_error(self, capsys, simulated_csv):
        rep = run_json(capsys, "fit", "--input", simulated_csv, "--delta", 0.05, "--max-iter", 1)
        assert rep["converged"] is False

    def test_non_positive_init(self, capsys, simulated_csv):
        code, _, err = run(capsys, "fit", "--input", simulated_csv, "--delta", 0.05, "--init", "1,0,1")
        assert code == 1 and "--init" in err

    def test_missing_delta(self, capsys, simulated_csv):
        code, _, err = run(capsys, "fit", "--input", simulated_csv)
        assert code == 1 and "usage:" in err and "--delta" in err

    @pytest.mark.parametrize(
        "body, line",
        [("t,x\n0,0\n0.1,abc\n", 3), ("t,x\n0,0\n0.1,1\n0.05,2\n", 4), ("time,x\n0,0\n", 1), ("t,x\n0,0\n0.1,1,2\n", 3)],
    )
    def test_malformed_csv(self, capsys, tmp_path, body, line):
        bad = tmp_path / "bad.csv"
        bad.write_text(body)
        code, _, err = run(capsys, "fit", "--input", bad, "--delta", 0.1)
        assert code == 2 and f"line {line}" in err

    def test_missing_input_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "fit", "--input", tmp_path / "nope.csv", "--delta", 0.1)
        assert code == 2


class TestExperiments:
    def test_lan_zero_direction(self, capsys):
        rep = run_json(capsys, "lan", *UNIT0, "--n", 50, "--delta", 0.1, "--reps", 100, "--seed", 1)
        assert rep["degenerate"] is True
        jsonschema.validate(rep, io.load_schema("lan"))

    def test_lan_echoes_resolved_delta(self, capsys, tmp_path):
        raw = tmp_path / "raw.csv"
        rep = run_json(capsys, "lan", *UNIT0, "-u", 1, "-v", 1, "-w", 1, "--n", 100, "--delta-rule", "n^-3/5",
                       "--reps", 100, "--seed", 3, "--raw-csv", raw)
        assert rep["metadata"]["resolved_delta"] == 100 ** -0.6
        assert rep["metadata"]["cli"]["delta_rule"] == "n^-3/5"
        assert len(raw.read_text().splitlines()) == 101
        jsonschema.validate(rep, io.load_schema("lan"))

    def test_lan_invalid_perturbation(self, capsys):
        code, _, err = run(capsys, "lan", *UNIT0, "-v", -100, "--n", 100, "--delta", 0.1, "--reps", 100, "--seed", 1)
        assert code == 1 and "sigma" in err

    def test_lan_both_delta_flags(self, capsys):
        code, _, _ = run(capsys, "lan", *UNIT0, "--n", 100, "--delta", 0.1, "--delta-rule", "n^-0.6",
                         "--reps", 100, "--seed", 1)
        assert code == 1

    def test_ergodic(self, capsys):
        rep = run_json(capsys, "ergodic", *UNIT0, "--n", 1000, "--delta", 0.01, "--g", "square", "--seed", 1)
        assert rep["predicted"] == 1.0
        jsonschema.validate(rep, io.load_schema("ergodic"))

    def test_scan(self, capsys):
        rep = run_json(capsys, "scan", *UNIT, "--deltas", "0.1,0.01", "--reps", 200, "--seed", 1)
        assert [r["delta"] for r in rep["rates"]] == [0.1, 0.01]
        jsonschema.validate(rep, io.load_schema("scan"))

    def test_replication_abort_exit_code(self, capsys, monkeypatch):
        from jumpou import lanlab

        def boom(*a, **k):
            raise FloatingPointError("forced")

        monkeypatch.setattr(lanlab, "log_likelihood_ratio", boom)
        code, _, err = run(capsys, "lan", *UNIT0, "-u", 1, "--n", 50, "--delta", 0.1, "--reps", 100, "--seed", 1)
        assert code == 3 and "replication 0" in err


def test_density_schema(capsys):
    rep = run_json(capsys, "density", *UNIT, "--delta", 0.1, "--x", 0, "--y", 0.5, "--grad", "--posterior")
    jsonschema.validate(rep, io.load_schema("density"))


def test_config_file_with_override(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# unit parameters\ntheta = 1\nsigma = 1\nlambda = 1\ndelta = 0.1\nx = 0\ny = 0.5  # trailing\n")
    from_file = run_json(capsys, "--config", cfg, "density")
    overridden = run_json(capsys, "--config", cfg, "density", "--y", 0.7)
    direct = run_json(capsys, "density", *UNIT, "--delta", 0.1, "--x", 0, "--y", 0.7)
    assert from_file["p"] != overridden["p"]
    assert overridden == direct


def test_config_file_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("thetta = 1\n")
    code, _, err = run(capsys, "--config", cfg, "density")
    assert code == 1 and "thetta" in err


def test_read_config_file_rejects_garbage(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("theta 1\n")
    with pytest.raises(UsageError, match=":1:"):
        read_config_file(cfg)


@pytest.mark.parametrize("rule, n, expected", [("n^-0.6", 4000, 4000 ** -0.6), ("n^-3/5", 10, 10 ** -0.6), (" n ^ -1 ", 8, 0.125)])
def test_parse_delta_rule(rule, n, expected):
    assert parse_delta_rule(rule, n) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("rule", ["n^0.6", "4000^-0.6", "n^-x", "exp(-n)"])
def test_parse_delta_rule_rejects(rule):
    with pytest.raises(UsageError):
        parse_delta_rule(rule, 10)


def test_no_subcommand(capsys):
    assert run(capsys)[0] == 1


def test_unknown_flag(capsys):
    assert run(capsys, "density", "--bogus", 1)[0] == 1


def test_json_numbers_have_17_digits():
    assert io.dumps({"a": 0.1, "b": float("nan"), "c": np.arange(2)}) == '{"a": 0.10000000000000001, "b": null, "c": [0, 1]}\n'


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "d.json"
    proc = subprocess.run(
        [sys.executable, "-m", "jumpou.cli", "density", *UNIT, "--delta", "0.1", "--x", "0", "--y", "0.5", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["p"] > 0


def test_read_path_csv_ignores_blank_lines():
    path = io.read_path_csv(stdio.StringIO("t,x\n0,1\n\n0.1,2\n"), 0.1)
    np.testing.assert_array_equal(path.values, [1.0, 2.0])
