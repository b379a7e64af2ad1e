import csv
import json
import os
from typing import Any, Iterable, Sequence

import numpy as np

from .metrics import RoundMetrics

METRICS_COLUMNS = [
    "t",
    "objective",
    "fw_gap",
    "surrogate_gap",
    "step_gap",
    "consensus_distance",
    "surrogate_value",
    "residual",
    "surrogate_residual",
    "theorem1_bound",
    "objective_bound",
    "consensus_bound",
    "eta",
    "lambda",
    "rho",
    "active_count",
    "feasible",
]

SUMMARY_COLUMNS = [
    "cell",
    "lambda0",
    "participation",
    "seed",
    "status",
    "rounds",
    "final_objective",
    "final_residual",
    "final_fw_gap",
    "final_surrogate_gap",
    "round1_surrogate_gap",
    "final_consensus_distance",
    "out_dir",
    "error",
]


def fmt(value: Any) -> str:
    """17 significant digits so every float64 round-trips; None becomes an empty cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def metrics_row(m: RoundMetrics) -> list[str]:
    values = [
        m.t,
        m.objective,
        m.fw_gap,
        m.surrogate_gap,
        m.step_gap,
        m.consensus_distance,
        m.surrogate_value,
        m.residual,
        m.surrogate_residual,
        m.theorem1_bound,
        m.objective_bound,
        m.consensus_bound,
        m.eta,
        m.lam,
        m.rho,
        m.active_count,
        m.feasible,
    ]
    return [fmt(v) for v in values]


class MetricsWriter:
    """Streams one metrics.csv row and one timing.csv row per round."""

    def __init__(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        self._metrics_file = open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="")
        self._timing_file = open(os.path.join(out_dir, "timing.csv"), "w", encoding="utf-8", newline="")
        self._metrics = csv.writer(self._metrics_file, lineterminator="\n")
        self._timing = csv.writer(self._timing_file, lineterminator="\n")
        self._metrics.writerow(METRICS_COLUMNS)
        self._timing.writerow(["t", "wall_ms"])
        self._last_t = 0

    def write(self, m: RoundMetrics, wall_ms: float) -> None:
        if m.t <= self._last_t:
            raise ValueError(f"metrics rows must have increasing t ({m.t} after {self._last_t})")
        self._last_t = m.t
        self._metrics.writerow(metrics_row(m))
        self._timing.writerow([m.t, f"{wall_ms:.3f}"])

    def close(self) -> None:
        self._metrics_file.close()
        self._timing_file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: str) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_baseline(path: str, trajectory: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t"] + [f"x_bar_{k}" for k in range(trajectory.shape[1])])
        for t, row in enumerate(trajectory, start=1):
            w.writerow([t] + [fmt(v) for v in row])


def write_summary_csv(path: str, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([fmt(row.get(col)) for col in SUMMARY_COLUMNS])


def write_report(path: str, checks: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["check", "passed", "worst_slack", "detail"])
        for c in checks:
            w.writerow([c["check"], fmt(bool(c["passed"])), fmt(c.get("worst_slack")), c.get("detail", "")])


def write_json(path: str, data: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
