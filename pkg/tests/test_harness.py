import csv
import json
import os
import statistics

import numpy as np
import pytest

from src import harness
from src.config import load_preset
from src.engine import Federation
from src.errors import InfeasiblePointError
from src.feasible_sets import Box
from src.model_file import load_model
from src.store import Store
from src.writer import METRICS_COLUMNS, SUMMARY_COLUMNS, read_metrics


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def test_run_writes_artifacts(make_config, tmp_path):
    out = str(tmp_path / "out")
    result = harness.run(make_config(rounds=30), out)
    for name in ["metrics.csv", "timing.csv", "resolved_config.json", "final_model.bin", "summary.json"]:
        assert os.path.exists(os.path.join(out, name)), name
    rows = read_metrics(os.path.join(out, "metrics.csv"))
    assert list(rows[0].keys()) == METRICS_COLUMNS
    assert [int(r["t"]) for r in rows] == list(range(1, 31))
    np.testing.assert_array_equal(load_model(os.path.join(out, "final_model.bin")), result.final_x)
    with open(os.path.join(out, "timing.csv"), encoding="utf-8") as f:
        assert next(csv.reader(f)) == ["t", "wall_ms"]
    with open(os.path.join(out, "resolved_config.json"), encoding="utf-8") as f:
        assert json.load(f)["rounds"] == 30
    assert result.summary["theorem1_violations"] == 0


def test_metrics_are_byte_identical_across_repeats_and_workers(make_config, tmp_path):
    cfg = make_config(rounds=200, participation=0.5, schedule={"regime": "partial_convex", "lambda0": 1.0})
    harness.run(cfg, str(tmp_path / "a"))
    harness.run(cfg, str(tmp_path / "b"))
    harness.run(cfg.with_overrides(workers=2), str(tmp_path / "c"))
    first = _read(tmp_path / "a" / "metrics.csv")
    assert first == _read(tmp_path / "b" / "metrics.csv")
    assert first == _read(tmp_path / "c" / "metrics.csv")


def test_baseline_companion_pinned_at_zero(make_config, tmp_path):
    result = harness.run(make_config(rounds=100, baseline=True), str(tmp_path / "out"))
    with open(tmp_path / "out" / "baseline.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 101
    assert all(float(r["x_bar_0"]) == 0.0 for r in rows)
    assert result.summary["baseline_max_abs"] == 0.0


def test_run_is_recorded_in_ledger(make_config, tmp_path):
    store = Store(str(tmp_path / "ledger.sqlite3"))
    try:
        harness.run(make_config(rounds=5), str(tmp_path / "ok"), store, preset="counterexample")
        with pytest.raises(InfeasiblePointError):
            harness.run(make_config(rounds=5, initial_point=[3.0]), str(tmp_path / "bad"), store)
        statuses = [r["status"] for r in reversed(store.recent_runs())]
        assert statuses == ["ok", "failed"]
    finally:
        store.close()


def test_default_out_dir_uses_env(make_config, tmp_path):
    result = harness.run(make_config(rounds=3))
    assert result.out_dir.startswith(str(tmp_path / "runs"))


def test_sweep_writes_summary(make_config, tmp_path):
    cfg = make_config(rounds=50, schedule={"regime": "partial_convex", "lambda0": 0.01})
    rows, failed = harness.sweep(cfg, {"lambda0": [0.001, 0.01]}, str(tmp_path / "sweep"))
    assert failed == 0
    assert len(rows) == 2
    with open(tmp_path / "sweep" / "summary.csv", encoding="utf-8") as f:
        table = list(csv.DictReader(f))
    assert list(table[0].keys()) == SUMMARY_COLUMNS
    assert [r["status"] for r in table] == ["ok", "ok"]
    assert float(table[1]["round1_surrogate_gap"]) > float(table[0]["round1_surrogate_gap"])
    assert os.path.exists(tmp_path / "sweep" / "cell_000" / "metrics.csv")


def test_single_cell_sweep_equals_run(make_config, tmp_path):
    cfg = make_config(rounds=40)
    harness.sweep(cfg, {}, str(tmp_path / "sweep"))
    harness.run(cfg, str(tmp_path / "run"))
    assert _read(tmp_path / "sweep" / "cell_000" / "metrics.csv") == _read(tmp_path / "run" / "metrics.csv")


def test_sweep_continues_after_failed_cell(make_config, tmp_path):
    rows, failed = harness.sweep(make_config(rounds=10), {"lambda0": [-1.0, 1.0]}, str(tmp_path / "sweep"))
    assert failed == 1
    assert [r["status"] for r in rows] == ["failed", "ok"]
    assert rows[0]["error"]


def test_verify_passes_on_counterexample(make_config, tmp_path):
    checks, ok = harness.verify(make_config(rounds=100), str(tmp_path / "verify"))
    assert ok, [c for c in checks if not c["passed"]]
    names = {c["check"] for c in checks}
    assert {"lmo_optimality", "server_recursion_vs_mean", "determinism", "theorem1_inequality"} <= names
    recursion = next(c for c in checks if c["check"] == "server_recursion_vs_mean")
    assert recursion["worst_slack"] <= 1e-9
    assert os.path.exists(tmp_path / "verify" / "verify_report.csv")


def test_verify_catches_negated_lmo(make_config, tmp_path, monkeypatch):
    original = Box.lmo
    monkeypatch.setattr(Box, "lmo", lambda self, g: original(self, -g))
    checks, ok = harness.verify(make_config(rounds=20), str(tmp_path / "verify"))
    assert not ok
    assert not next(c for c in checks if c["check"] == "lmo_optimality")["passed"]


@pytest.mark.parametrize("rounds", [100, 1000])
def test_theorem2_bound_on_nonconvex_preset(rounds, tmp_path):
    cfg = load_preset("thm2-nonconvex").with_overrides(rounds=rounds)
    result = harness.run(cfg, str(tmp_path / "out"))
    assert result.summary["mean_step_gap"] <= result.summary["theorem2_bound"]
    assert all(m.step_gap >= -1e-9 and m.surrogate_gap >= -1e-9 for m in result.history)


def test_nonconvex_min_gap_shrinks_with_horizon(tmp_path):
    min_gaps = []
    for rounds in (100, 1000):
        cfg = load_preset("thm2-nonconvex").with_overrides(rounds=rounds)
        result = harness.run(cfg, str(tmp_path / f"T{rounds}"))
        min_gaps.append(min(m.step_gap for m in result.history))
    assert min_gaps[1] <= min_gaps[0]


def test_stochastic_preset_makes_progress(tmp_path):
    cfg = load_preset("thm3-sto").with_overrides(rounds=200)
    cfg = cfg.with_overrides(bounds=type(cfg.bounds)(reference_iterations=300))
    result = harness.run(cfg, str(tmp_path / "out"))
    assert result.history[-1].objective < result.history[0].objective
    assert len(result.summary["accuracy"]) == 10
    assert result.summary["theorem3"]["C"] > 0
    assert result.summary["constants"]["sigma"] > 0


@pytest.mark.slow
def test_counterexample_preset(tmp_path):
    result = harness.run(load_preset("counterexample"), str(tmp_path / "out"))
    last = result.history[-1]
    assert abs(last.objective - 4.0) <= 1e-3
    assert result.summary["baseline_max_abs"] <= 1e-12


@pytest.mark.slow
def test_thm1_preset_satisfies_bound_every_round(tmp_path):
    result = harness.run(load_preset("thm1-quadratic"), str(tmp_path / "out"))
    assert result.summary["theorem1_violations"] == 0


@pytest.mark.slow
def test_participation_sweep_residual_nonincreasing(tmp_path):
    cfg = load_preset("pp-sweep")
    rows, failed = harness.sweep(cfg, {"lambda0": [0.01]}, str(tmp_path / "sweep"))
    assert failed == 0
    medians = [
        statistics.median(r["final_residual"] for r in rows if r["participation"] == p) for p in (0.2, 0.5, 1.0)
    ]
    assert medians[0] >= medians[1] >= medians[2]


@pytest.fixture(scope="module")
def stochastic_preset():
    cfg = load_preset("thm3-sto")
    return cfg, harness.prepare(cfg)


@pytest.mark.slow
def test_stochastic_residual_drops_by_two_thirds(stochastic_preset):
    cfg, p = stochastic_preset
    early, late = [], []
    for seed in range(10):
        with Federation(
            p.problem, cfg.schedule_obj(), cfg.algorithm, p.ctx, seed=seed, batch_size=cfg.batch_size
        ) as fed:
            for t in range(1, cfg.rounds + 1):
                fed.step(record=False)
                if t == 100:
                    early.append(p.problem.value(fed.state.x_bar) - p.ctx.f_star)
            late.append(p.problem.value(fed.state.x_bar) - p.ctx.f_star)
    assert statistics.median(late) < statistics.median(early) / 3.0


def test_sparse_metrics_cadence(make_config, tmp_path):
    result = harness.run(make_config(rounds=25, metrics_every=10), str(tmp_path / "out"))
    assert [m.t for m in result.history] == [1, 10, 20, 25]
    rows = read_metrics(str(tmp_path / "out" / "metrics.csv"))
    assert [int(r["t"]) for r in rows] == [1, 10, 20, 25]
    full = harness.run(make_config(rounds=25), str(tmp_path / "full"))
    np.testing.assert_array_equal(result.final_x, full.final_x)
