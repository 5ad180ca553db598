"""Command-line runner: configs, outputs, exit codes, determinism."""

import csv
import io
import json
import math

import pytest

from reliakit.cli import main


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def linear_mc_config(out, n=20_000, beta0=2.0):
    return {
        "problem": {"benchmark": "linear", "beta0": beta0, "dimension": 2},
        "method": {"name": "mc", "n": n},
        "seed": 3,
        "output": {"path": out, "format": "json"},
    }


class TestRun:
    def test_mc_roundtrip(self, tmp_path, capsys):
        out = str(tmp_path / "res.json")
        cfg = write_config(tmp_path, linear_mc_config(out))
        assert main(["run", "--config", cfg]) == 0
        record = json.loads(open(out).read())
        assert record["seed"] == 3
        assert record["result"]["method"] == "mc"
        assert record["result"]["n_calls"] == 20_000
        pf = record["result"]["pf"]
        assert 0.01 < pf < 0.04  # near Phi(-2)
        err = capsys.readouterr().err
        assert "pf=" in err and "mc" in err

    def test_output_is_byte_identical_across_reruns(self, tmp_path):
        out1 = str(tmp_path / "a.json")
        out2 = str(tmp_path / "b.json")
        cfg1 = write_config(tmp_path, linear_mc_config(out1), "c1.json")
        cfg2 = write_config(tmp_path, linear_mc_config(out2), "c2.json")
        assert main(["run", "--config", cfg1]) == 0
        assert main(["run", "--config", cfg2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()
        assert open(out1).read().endswith("\n")

    def test_seed_flag_overrides_config(self, tmp_path):
        out1 = str(tmp_path / "a.json")
        out2 = str(tmp_path / "b.json")
        cfg1 = write_config(tmp_path, linear_mc_config(out1), "c1.json")
        cfg2 = write_config(tmp_path, linear_mc_config(out2), "c2.json")
        assert main(["run", "--config", cfg1]) == 0
        assert main(["run", "--config", cfg2, "--seed", "99"]) == 0
        a = json.loads(open(out1).read())
        b = json.loads(open(out2).read())
        assert b["seed"] == 99
        assert a["result"]["pf"] != b["result"]["pf"]

    def test_stdout_when_no_output_configured(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "method": {"name": "mc", "n": 5000},
                "seed": 1,
            },
        )
        assert main(["run", "--config", cfg]) == 0
        outx = capsys.readouterr().out
        record = json.loads(outx)
        assert record["result"]["method"] == "mc"

    def test_method_override_changes_sample_size(self, tmp_path):
        out = str(tmp_path / "r.json")
        cfg = write_config(tmp_path, linear_mc_config(out, n=5000))
        assert main(["run", "--config", cfg, "--method-override", "n=12000"]) == 0
        record = json.loads(open(out).read())
        assert record["result"]["n_calls"] == 12000

    def test_bad_override_rejected(self, tmp_path):
        out = str(tmp_path / "r.json")
        cfg = write_config(tmp_path, linear_mc_config(out))
        assert main(["run", "--config", cfg, "--method-override", "n=-5"]) == 2
        assert main(["run", "--config", cfg, "--method-override", "bogus"]) == 2

    def test_expression_problem(self, tmp_path):
        out = str(tmp_path / "r.json")
        cfg = write_config(
            tmp_path,
            {
                "problem": {
                    "expression": "b - x1",
                    "name": "shifted",
                    "marginals": [{"family": "gaussian", "params": [0.0, 1.0]}],
                },
                "method": {"name": "form"},
                "seed": 0,
                "output": {"path": out},
            },
        )
        # undeclared parameter b must be rejected at problem build time
        assert main(["run", "--config", cfg]) == 2

    def test_expression_form_beta(self, tmp_path):
        out = str(tmp_path / "r.json")
        cfg = write_config(
            tmp_path,
            {
                "problem": {
                    "expression": "2.5 - x1",
                    "marginals": [{"family": "gaussian", "params": [0.0, 1.0]}],
                },
                "method": {"name": "form"},
                "seed": 0,
                "output": {"path": out},
            },
        )
        assert main(["run", "--config", cfg]) == 0
        record = json.loads(open(out).read())
        assert record["result"]["beta"] == pytest.approx(2.5, abs=1e-6)

    def test_waarts_fosm_fails_numerically(self, tmp_path):
        # degenerate gradient at the origin: exit 3, not a crash
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "method": {"name": "fosm"},
                "seed": 0,
            },
        )
        assert main(["run", "--config", cfg]) == 3


class TestConfigValidation:
    def test_missing_file(self):
        assert main(["run", "--config", "/nonexistent/cfg.json"]) == 2

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run", "--config", str(p)]) == 2

    def test_unknown_method(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "method": {"name": "sorm"},
            },
        )
        assert main(["run", "--config", cfg]) == 2

    def test_out_of_range_option(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "method": {"name": "mc", "n": 0},
            },
        )
        assert main(["run", "--config", cfg]) == 2

    def test_unknown_option_key(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "method": {"name": "mc", "samples": 100},
            },
        )
        assert main(["run", "--config", cfg]) == 2

    def test_run_requires_method_entry(self, tmp_path):
        cfg = write_config(tmp_path, {"problem": {"benchmark": "waarts"}})
        assert main(["run", "--config", cfg]) == 2

    def test_compare_requires_methods_entry(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "method": {"name": "mc", "n": 100},
            },
        )
        assert main(["compare", "--config", cfg]) == 2

    def test_no_output_file_written_on_config_error(self, tmp_path):
        out = tmp_path / "should_not_exist.json"
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "method": {"name": "mc", "n": 0},
                "output": {"path": str(out)},
            },
        )
        assert main(["run", "--config", cfg]) == 2
        assert not out.exists()

    def test_bad_marginal_params_rejected(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "problem": {
                    "expression": "1 - x1",
                    "marginals": [{"family": "gaussian", "params": [0.0, -1.0]}],
                },
                "method": {"name": "mc", "n": 100},
            },
        )
        assert main(["run", "--config", cfg]) == 2


class TestCompare:
    def test_two_methods_csv(self, tmp_path):
        out = str(tmp_path / "cmp.csv")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "methods": [
                    {"name": "mc", "n": 30_000},
                    {"name": "form"},
                ],
                "seed": 5,
                "output": {"path": out, "format": "csv"},
            },
        )
        assert main(["compare", "--config", cfg]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["method"] for r in rows] == ["mc", "form"]
        assert all(r["status"] == "ok" for r in rows)
        assert float(rows[1]["beta"]) == pytest.approx(2.0, abs=1e-6)
        mc_pf = float(rows[0]["pf"])
        assert 0.015 < mc_pf < 0.035

    def test_header_layout(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 1.0, "dimension": 1},
                "methods": [{"name": "mc", "n": 2000}],
                "seed": 0,
            },
        )
        assert main(["compare", "--config", cfg]) == 0
        text = capsys.readouterr().out
        header = text.splitlines()[0]
        assert header == "method,pf,beta,cov,n_calls,status"

    def test_partial_failure_keeps_exit_zero(self, tmp_path):
        out = str(tmp_path / "cmp.csv")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "methods": [
                    {"name": "fosm"},
                    {"name": "mc", "n": 50_000},
                ],
                "seed": 2,
                "output": {"path": out, "format": "csv"},
            },
        )
        assert main(["compare", "--config", cfg]) == 0
        rows = list(csv.DictReader(open(out)))
        assert rows[0]["status"] == "failed"
        assert rows[1]["status"] == "ok"

    def test_all_failures_exit_three(self, tmp_path):
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "waarts"},
                "methods": [{"name": "fosm"}],
                "seed": 2,
            },
        )
        assert main(["compare", "--config", cfg]) == 3

    def test_per_method_seed_offsets(self, tmp_path):
        # two identical mc entries must not produce identical estimates
        out = str(tmp_path / "cmp.csv")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 1.5, "dimension": 2},
                "methods": [
                    {"name": "mc", "n": 20_000},
                    {"name": "mc", "n": 20_000},
                ],
                "seed": 7,
                "output": {"path": out, "format": "csv"},
            },
        )
        assert main(["compare", "--config", cfg]) == 0
        rows = list(csv.DictReader(open(out)))
        assert rows[0]["pf"] != rows[1]["pf"]


class TestEnvironment:
    def test_output_dir_env_applies_to_relative_paths(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RELIAKIT_OUTPUT_DIR", str(tmp_path / "outs"))
        (tmp_path / "outs").mkdir()
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "method": {"name": "mc", "n": 2000},
                "seed": 0,
                "output": {"path": "rel.json"},
            },
        )
        assert main(["run", "--config", cfg]) == 0
        assert (tmp_path / "outs" / "rel.json").exists()

    def test_threads_env_and_flag(self, tmp_path, monkeypatch):
        out1 = str(tmp_path / "t1.json")
        out2 = str(tmp_path / "t4.json")
        cfg1 = write_config(tmp_path, linear_mc_config(out1, n=8000), "c1.json")
        cfg2 = write_config(tmp_path, linear_mc_config(out2, n=8000), "c2.json")
        monkeypatch.setenv("RELIAKIT_THREADS", "4")
        assert main(["run", "--config", cfg1]) == 0
        monkeypatch.delenv("RELIAKIT_THREADS")
        assert main(["run", "--config", cfg2, "--threads", "1"]) == 0
        # thread count is an execution detail, never a result detail
        a = json.loads(open(out1).read())
        b = json.loads(open(out2).read())
        assert a["result"] == b["result"]

    def test_csv_suffix_forces_csv(self, tmp_path):
        out = str(tmp_path / "res.csv")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "method": {"name": "mc", "n": 2000},
                "seed": 0,
                "output": {"path": out},
            },
        )
        assert main(["run", "--config", cfg]) == 0
        first = open(out).read().splitlines()[0]
        assert first.startswith("method,")


class TestSurrogateMethods:
    def test_qrs_on_linear_benchmark(self, tmp_path):
        out = str(tmp_path / "q.json")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "method": {"name": "qrs", "n_surrogate": 200_000},
                "seed": 1,
                "output": {"path": out},
            },
        )
        assert main(["run", "--config", cfg]) == 0
        record = json.loads(open(out).read())
        pf = record["result"]["pf"]
        assert pf == pytest.approx(float(0.0227501), rel=0.1)
        # true-model cost is only the design, not the surrogate sweep
        assert record["result"]["n_calls"] < 100

    def test_pce_fixed_degree(self, tmp_path):
        out = str(tmp_path / "p.json")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "method": {"name": "pce", "degree": 2, "n_surrogate": 200_000},
                "seed": 1,
                "output": {"path": out},
            },
        )
        assert main(["run", "--config", cfg]) == 0
        record = json.loads(open(out).read())
        assert record["result"]["pf"] == pytest.approx(0.0227501, rel=0.1)

    def test_metais_summary_reports_split_cost(self, tmp_path, capsys):
        out = str(tmp_path / "m.json")
        cfg = write_config(
            tmp_path,
            {
                "problem": {"benchmark": "linear", "beta0": 2.0, "dimension": 2},
                "method": {
                    "name": "metais",
                    "n_epsilon": 20_000,
                    "n_corr": 40,
                    "budget": 30,
                    "n_bounds": 10_000,
                    "n_chain": 100,
                },
                "seed": 4,
                "output": {"path": out},
            },
        )
        assert main(["run", "--config", cfg]) == 0
        err = capsys.readouterr().err
        assert "+" in err  # doe+corr cost split
        record = json.loads(open(out).read())
        res = record["result"]
        assert res["n_calls"] == res["n_calls_doe"] + res["n_calls_corr"]
        assert res["pf"] == pytest.approx(0.0227501, rel=0.5)
