import csv
import io
import json

import pytest

from ddip import __version__
from ddip.cli import (
    EXIT_INPUT,
    EXIT_LIMIT,
    EXIT_OK,
    EXIT_SOLVER,
    ConfigError,
    RunConfig,
    main,
)
from ddip.hvac_plant import synth_timeseries, write_timeseries_csv
from ddip.mpc_model import load_mpc


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def read_csv(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_build_reports_structure(tmp_path):
    code, out, _ = run_cli("build", "--seed", 7, "--horizon", 24, "--output-dir", tmp_path)
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["binaries"] == 480
    assert summary["version"] == __version__ and len(summary["config_hash"]) == 16
    assert load_mpc(tmp_path / "problem.json").horizon == 24


def test_build_from_csv_and_bad_csv(tmp_path):
    good = tmp_path / "series.csv"
    write_timeseries_csv(synth_timeseries(1, 6), good)
    code, out, _ = run_cli("build", "--source", "csv", "--path", good, "--output-dir", tmp_path / "a")
    assert code == EXIT_OK and json.loads(out)["horizon"] == 6
    bad = tmp_path / "bad.csv"
    bad.write_text("t,pi_e,L_e,L_cw,L_hw\n0,0.1,1,1,oops\n")
    code, _, err = run_cli("build", "--source", "csv", "--path", bad, "--output-dir", tmp_path / "b")
    assert code == EXIT_INPUT
    doc = json.loads(err)
    assert doc["error"] == "input" and "row 1" in doc["message"]
    code, _, err = run_cli("build", "--source", "csv", "--path", tmp_path / "missing.csv", "--output-dir", tmp_path)
    assert code == EXIT_INPUT and "missing.csv" in err


def test_solve_both_writes_artifacts(tmp_path):
    code, out, _ = run_cli("solve", "--toy", "battery", "--lp", "--output-dir", tmp_path)
    assert code == EXIT_OK
    for name in ("ddip_run.json", "bounds.csv", "soc.csv", "comparison.json", "extensive.json"):
        assert (tmp_path / name).exists()
    report = json.loads((tmp_path / "comparison.json").read_text())
    assert report["extensive"]["objective"] == pytest.approx(15.0)
    assert report["ddip"]["best_ub"] == pytest.approx(15.0)
    for row in report["bound_trace"]:
        assert row["gap"] == pytest.approx((row["best_ub"] - row["lb"]) / max(1.0, abs(row["best_ub"])))
    rows = read_csv(tmp_path / "bounds.csv")
    assert [r["k"] for r in rows] == ["1", "2", "3"]
    for r in rows:
        ub, lb = float(r["best_ub"]), float(r["lb"])
        assert float(r["gap"]) == (ub - lb) / max(1.0, abs(ub))
    soc = read_csv(tmp_path / "soc.csv")
    assert set(soc[0]) == {"t", "extensive_E", "ddip_E", "ddip_iter1_E"}
    assert len(soc) == 5
    head = (tmp_path / "bounds.csv").read_text().splitlines()[0]
    assert head.startswith("# config_hash=") and f"version={__version__}" in head


def test_solve_reruns_byte_identical(tmp_path):
    args = ("solve", "--toy", "scalar", "--solver", "ddip", "--stages", 3)
    assert run_cli(*args, "--output-dir", tmp_path / "a")[0] == EXIT_OK
    assert run_cli(*args, "--output-dir", tmp_path / "b")[0] == EXIT_OK
    assert (tmp_path / "a" / "bounds.csv").read_bytes() == (tmp_path / "b" / "bounds.csv").read_bytes()
    assert (tmp_path / "a" / "soc.csv").read_bytes() == (tmp_path / "b" / "soc.csv").read_bytes()


def test_iteration_limit_exit_code(tmp_path):
    code, out, _ = run_cli("solve", "--toy", "battery", "--lp", "--solver", "ddip", "--max-iterations", 0,
                           "--output-dir", tmp_path)
    assert code == EXIT_LIMIT
    assert read_csv(tmp_path / "bounds.csv") == []
    assert json.loads(out)["ddip"]["iterations"] == 0


def test_solver_hard_error_exit_code(tmp_path):
    from ddip.mpc_model import save_mpc
    from test_engine import _unmeetable

    path = tmp_path / "p.json"
    save_mpc(_unmeetable(False), path)
    code, _, err = run_cli("solve", "--source", "problem", "--path", path, "--solver", "ddip",
                           "--output-dir", tmp_path / "o")
    assert code == EXIT_SOLVER
    doc = json.loads(err)
    assert doc["error"] == "stage-infeasible" and doc["stage"] == 1
    code, _, err = run_cli("solve", "--source", "problem", "--path", path, "--solver", "extensive",
                           "--output-dir", tmp_path / "o")
    assert code == EXIT_SOLVER and json.loads(err)["error"] == "solver"


def test_enumerate_optima_on_symmetric_toy(tmp_path):
    code, out, _ = run_cli("enumerate-optima", "--toy", "symmetric", "--count", 5, "--output-dir", tmp_path)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "optima.json").read_text())
    assert len(doc["solutions"]) == 2
    assert {s["binary_pattern"] for s in doc["solutions"]} == {"10", "01"}
    assert doc["solutions"][0]["objective"] == doc["solutions"][1]["objective"] == 15.0
    assert (tmp_path / "soc_0.csv").exists() and (tmp_path / "soc_1.csv").exists()


def test_enumerate_count_one_matches_solve(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"instance": {"source": "toy", "toy": "battery",
                                            "toy_args": {"integer": True}}}))
    assert run_cli("enumerate-optima", "--config", cfg, "--count", 1, "--output-dir", tmp_path / "e")[0] == 0
    assert run_cli("solve", "--config", cfg, "--solver", "extensive", "--output-dir", tmp_path / "s")[0] == 0
    sols = json.loads((tmp_path / "e" / "optima.json").read_text())["solutions"]
    ext = json.loads((tmp_path / "s" / "extensive.json").read_text())
    assert len(sols) == 1 and sols[0]["objective"] == ext["objective"]
    a = read_csv(tmp_path / "e" / "soc_0.csv")
    b = read_csv(tmp_path / "s" / "soc.csv")
    assert [r["solution0_E"] for r in a] == [r["extensive_E"] for r in b]


def test_enumerate_needs_binaries(tmp_path):
    code, _, err = run_cli("enumerate-optima", "--toy", "scalar", "--output-dir", tmp_path)
    assert code == EXIT_INPUT and "binary" in err


def test_scaling_table(tmp_path):
    cfg = {"instance": {"source": "synthetic", "seed": 3, "relax_min_capacity": True, "integer": False},
           "solver": "both", "max_extensive_binaries": 0, "ddip": {"epsilon": 1e-4}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, _, _ = run_cli("scaling", "--config", path, "--horizons", 2, 4, "--output-dir", tmp_path / "o")
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "o" / "scaling.csv")
    assert [int(r["N"]) for r in rows] == [2, 4]
    for r in rows:
        n = int(r["N"])
        assert int(r["rows_reported"]) == 55 * n + 3 and int(r["binaries"]) == 0
        assert r["extensive_time"] != "skipped"  # zero binaries never exceed the cap
        assert r["status"] == "converged" and int(r["ddip_iterations"]) <= 150


def test_scaling_skips_large_extensive_and_records_errors(tmp_path):
    cfg = {"instance": {"source": "toy", "toy": "symmetric"}, "max_extensive_binaries": 1}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, _, _ = run_cli("scaling", "--config", path, "--horizons", 1, 2, "--output-dir", tmp_path / "o")
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "o" / "scaling.csv")
    assert rows[0]["extensive_time"] == "skipped" and int(rows[0]["ddip_iterations"]) >= 1
    assert rows[1]["status"] == "error" and "horizon" in rows[1]["error"]


def test_scaling_empty_horizon_list(tmp_path):
    code, out, _ = run_cli("scaling", "--horizons", "--output-dir", tmp_path)
    assert code == EXIT_OK and json.loads(out)["rows"] == 0
    assert read_csv(tmp_path / "scaling.csv") == []


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"output_dir": str(tmp_path / "from_config"),
                               "instance": {"source": "toy", "toy": "battery"}}))
    monkeypatch.setenv("DDIP_OUTPUT_DIR", str(tmp_path / "from_env"))
    run_cli("build", "--config", cfg)
    assert (tmp_path / "from_env" / "problem.json").exists()
    run_cli("build", "--config", cfg, "--output-dir", tmp_path / "from_flag")
    assert (tmp_path / "from_flag" / "problem.json").exists()
    monkeypatch.delenv("DDIP_OUTPUT_DIR")
    run_cli("build", "--config", cfg)
    assert (tmp_path / "from_config" / "problem.json").exists()


@pytest.mark.parametrize("doc,match", [
    ({"colour": 1}, "unknown configuration key"),
    ({"solver": "magic"}, "solver must be"),
    ({"instance": {"source": "csv"}}, "needs instance.path"),
    ({"instance": {"source": "synthetic", "path": "x.csv"}}, "exactly one source"),
    ({"ddip": {"backward_mode": "sideways"}}, "backward_mode"),
    ({"instance": {"source": "toy", "toy": "battery", "horizon": 9}}, "horizon"),
])
def test_config_errors_exit_2(tmp_path, doc, match):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    code, _, err = run_cli("build", "--config", path, "--output-dir", tmp_path / "o")
    assert code == EXIT_INPUT
    assert match in json.loads(err)["message"]


def test_malformed_config_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{\n  'single quotes'\n}")
    code, _, err = run_cli("build", "--config", path)
    assert code == EXIT_INPUT and "line 2" in err


def test_config_hash_ignores_output_dir_only():
    a = RunConfig(output_dir="x")
    b = RunConfig(output_dir="y")
    c = RunConfig.from_dict({"solver": "ddip"})
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert RunConfig.from_dict(a.to_dict()).to_dict() == a.to_dict()
    with pytest.raises(ConfigError):
        RunConfig(count=0)


def test_help_and_usage_errors():
    code, _, _ = run_cli("--help")
    assert code == 0
    code, _, _ = run_cli("frobnicate")
    assert code == 2
