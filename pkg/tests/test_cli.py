import csv
import json

import pytest

from aoimac.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, RESULT_COLUMNS, main, run_point

SMALL = {
    "version": 1,
    "scenario": {"max_rounds": 3, "delta_max": 12},
    "channel": {"K": 4},
    "sim": {"slots": 20_000},
    "learner": {"iterations": 2_000, "episodes": 3, "log_every": 1_000},
}


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def merged(**sections):
    out = json.loads(json.dumps(SMALL))
    for k, v in sections.items():
        if isinstance(v, dict):
            out.setdefault(k, {}).update(v)
        else:
            out[k] = v
    return out


def test_validate_prints_resolved_document(tmp_path, capsys):
    assert main(["validate-config", "--config", write(tmp_path, SMALL)]) == EXIT_OK
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["channel"]["K"] == 4 and resolved["solver"]["gamma_v"] == 1e-6


def test_bad_config_exits_one(tmp_path):
    assert main(["validate-config", "--config", write(tmp_path, {"version": 1, "x": 1})]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("scheme", ["oma", "noma"])
def test_solve_writes_report_and_policies(tmp_path, scheme):
    out = tmp_path / "o"
    assert main(["solve", "--config", write(tmp_path, SMALL), "--scheme", scheme, "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / f"solve_{scheme}.json").read_text())
    assert rep["converged"] and rep["weighted_age"] == pytest.approx(sum(rep["ages"]))
    for side in ("minus", "plus"):
        assert (out / f"policy_{scheme}_{side}.csv").exists()


def test_solve_is_bit_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL)
    main(["solve", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["solve", "--config", cfg, "--out", str(tmp_path / "b")])
    for name in ("solve_oma.json", "policy_oma_plus.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_solve_reports_sweep_cap_as_numeric_failure(tmp_path):
    cfg = write(tmp_path, merged(solver={"max_sweeps": 1, "gamma_v": 1e-12}))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_generous_budget_records_zero_multiplier(tmp_path):
    cfg = write(tmp_path, merged(scenario={"budget_db": 60.0}))
    main(["solve", "--config", cfg, "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "solve_oma.json").read_text())
    assert rep["beta_plus"] == [0.0, 0.0] and rep["status"] == ["slack", "slack"]


def test_train_twice_same_curve(tmp_path):
    cfg = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["train", "--config", cfg, "--seed", "5", "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "curve_oma.csv").read_bytes() == (tmp_path / "b" / "curve_oma.csv").read_bytes()
    rep = json.loads((tmp_path / "a" / "train_oma.json").read_text())
    assert rep["seed"] == 5 and rep["runs"] == 1


def test_simulate_with_trace(tmp_path):
    cfg = write(tmp_path, merged(sim={"trace": True, "slots": 5_000}))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    data = json.loads((tmp_path / "sim_oma.json").read_text())
    assert data["slots"] == 5_000 and "theory_weighted_age" in data
    assert (tmp_path / "trace_oma.csv").exists()


def test_simulate_fixed_index_range_checked(tmp_path):
    cfg = write(tmp_path, merged(sim={"policy": "fixed-index", "fixed_index": 9}))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_sweep_without_axes_is_a_config_error(tmp_path):
    assert main(["sweep", "--config", write(tmp_path, SMALL), "--out", str(tmp_path)]) == EXIT_CONFIG


def sweep_config(**extra):
    return merged(sweep={"axes": [{"path": "scenario.budget_db", "values": [-2.0, 2.0]}],
                         "schemes": ["oma-opt", "oma-fixed", "noma-rl"], "seeds": [1]},
                  output={"timing": False}, **extra)


def test_sweep_rows_and_worker_independence(tmp_path):
    cfg = write(tmp_path, sweep_config())
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "one")]) == EXIT_OK
    assert main(["sweep", "--config", cfg, "--workers", "2", "--out", str(tmp_path / "two")]) == EXIT_OK
    a = (tmp_path / "one" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "two" / "sweep.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "one" / "sweep.csv")))
    assert tuple(rows[0]) == RESULT_COLUMNS and len(rows) == 6
    assert [r["scheme"] for r in rows[:3]] == ["oma-opt", "oma-fixed", "noma-rl"]
    by = {(r["scheme"], r["budget_db"]): r for r in rows}
    for db in ("-2.0", "2.0"):
        assert float(by["oma-opt", db]["age_theory"]) <= float(by["oma-fixed", db]["age_theory"])
    # fields that do not apply stay empty
    assert by["noma-rl", "2.0"]["rho"] == "" and by["noma-rl", "2.0"]["xi_1"] == ""
    assert all(r["status"] == "ok" and r["runtime"] == "0.0" for r in rows)


def test_failed_point_recorded_with_status(tmp_path):
    data = sweep_config(solver={"beta_cap": 0.5})
    data["sweep"]["schemes"] = ["oma-opt"]
    assert main(["sweep", "--config", write(tmp_path, data), "--out", str(tmp_path)]) == EXIT_NUMERIC
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    by = {r["budget_db"]: r["status"] for r in rows}
    assert by["-2.0"].startswith("failed: InfeasibleBudget") and by["2.0"] == "ok"


def test_run_point_direct():
    from aoimac.config import ExperimentConfig
    exp = ExperimentConfig.from_dict(merged(output={"timing": False}))
    row = run_point(exp.raw, "noma-opt", 3)
    assert row["status"] == "ok" and row["rho"] is None and row["seed"] == 3
    assert abs(row["age_sim"] - row["age_theory"]) / row["age_theory"] < 0.05
