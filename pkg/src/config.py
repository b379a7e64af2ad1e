import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .engine import ALGORITHMS, FEDFW_STO
from .errors import ConfigError, DimensionError, NumericalError
from .feasible_sets import FeasibleSet, build_set
from .objectives import (
    Problem,
    SyntheticSpec,
    generate_synthetic,
    load_csv_dataset,
    mclr_problem,
    quadratic_problem,
)
from .scheduler import CONVEX, NONCONVEX, PARTIAL_CONVEX, PARTIAL_NONCONVEX, REGIMES, STOCHASTIC, Schedule
from .vectors import as_vec

logger = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).resolve().parent.parent
PRESET_DIR = ROOT_DIR / "config" / "presets"

PROBLEM_KEYS = {
    "quadratic": {"kind", "targets", "weights", "noise_std", "optimum"},
    "mclr_synthetic": {
        "kind",
        "n_clients",
        "samples_per_client",
        "features",
        "classes",
        "heterogeneity",
        "labels_per_client",
        "mu",
        "data_seed",
    },
    "mclr_csv": {"kind", "paths", "classes", "mu"},
}
SWEEP_KEYS = ("lambda0", "participation", "seed")


def _load_json(path: str | Path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _section(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


@dataclass(frozen=True)
class ScheduleSection:
    regime: str = "convex"
    lambda0: float = 1.0
    rho_override: float | None = None


@dataclass(frozen=True)
class BoundsSection:
    dual_norm: float | None = None
    init_gap_iterations: int = 10_000
    reference_iterations: int = 10_000


@dataclass(frozen=True)
class SweepSection:
    lambda0: list[float] = field(default_factory=list)
    participation: list[float] = field(default_factory=list)
    seed: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class RunConfig:
    problem: dict[str, Any]
    feasible_set: dict[str, Any]
    algorithm: str = "fedfw"
    rounds: int = 100
    seed: int = 0
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    participation: float = 1.0
    client_sets: list[dict[str, Any]] | None = None
    batch_size: int | None = None
    initial_point: list[float] | None = None
    verify: bool = False
    output_dir: str | None = None
    workers: int = 1
    baseline: bool = False
    bounds: BoundsSection = field(default_factory=BoundsSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    description: str = ""
    log_every: int = 100
    metrics_every: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {list(ALGORITHMS)}, got {self.algorithm!r}")
        if self.schedule.regime not in REGIMES:
            raise ConfigError(f"schedule.regime must be one of {list(REGIMES)}, got {self.schedule.regime!r}")
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError("rounds must be an integer >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError(f"participation must lie in (0, 1], got {self.participation!r}")
        if not self.schedule.lambda0 > 0:
            raise ConfigError("schedule.lambda0 must be > 0")
        if self.participation < 1.0 and self.schedule.regime not in (PARTIAL_CONVEX, PARTIAL_NONCONVEX):
            raise ConfigError("participation < 1 requires the partial_convex or partial_nonconvex regime")
        if self.algorithm == FEDFW_STO and self.schedule.regime != STOCHASTIC and self.schedule.rho_override is None:
            raise ConfigError("fedfw_sto needs schedule.regime = stochastic or a schedule.rho_override")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if not isinstance(self.metrics_every, int) or self.metrics_every < 1:
            raise ConfigError("metrics_every must be an integer >= 1")
        kind = self.problem.get("kind")
        if kind not in PROBLEM_KEYS:
            raise ConfigError(f"problem.kind must be one of {sorted(PROBLEM_KEYS)}, got {kind!r}")
        unknown = set(self.problem) - PROBLEM_KEYS[kind]
        if unknown:
            raise ConfigError(f"[problem] unknown keys for {kind}: {sorted(unknown)}")
        if kind == "mclr_csv":
            for path in self.problem.get("paths", []):
                if not os.path.exists(path):
                    raise ConfigError(f"dataset file not found: {path}")

    def schedule_obj(self) -> Schedule:
        return Schedule(
            regime=self.schedule.regime,
            lambda0=self.schedule.lambda0,
            horizon=self.rounds,
            participation=self.participation,
            rho_override=self.schedule.rho_override,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **changes: Any) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        lambda0 = changes.pop("lambda0", None)
        if lambda0 is not None:
            changes["schedule"] = replace(self.schedule, lambda0=float(lambda0))
        participation = changes.get("participation")
        partial = {CONVEX: PARTIAL_CONVEX, NONCONVEX: PARTIAL_NONCONVEX}
        if participation is not None and participation < 1.0 and self.schedule.regime in partial:
            schedule = changes.get("schedule", self.schedule)
            changes["schedule"] = replace(schedule, regime=partial[self.schedule.regime])
        return replace(self, **changes)


def parse_config(data: dict[str, Any], name: str = "") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    data = dict(data)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("problem", "feasible_set"):
        if required not in data:
            raise ConfigError(f"missing required section [{required}]")
    data["schedule"] = _section(ScheduleSection, data.get("schedule"), "schedule")
    data["bounds"] = _section(BoundsSection, data.get("bounds"), "bounds")
    data["sweep"] = _section(SweepSection, data.get("sweep"), "sweep")
    if not isinstance(data["problem"], dict) or not isinstance(data["feasible_set"], dict):
        raise ConfigError("[problem] and [feasible_set] must be objects")
    data.setdefault("name", name)
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    return parse_config(_load_json(path), name=Path(path).stem)


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_preset(name: str) -> RunConfig:
    path = PRESET_DIR / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return load_config(path)


def preset_description(name: str) -> str:
    return str(_load_json(PRESET_DIR / f"{name}.json").get("description", ""))


def build_problem(cfg: RunConfig) -> Problem:
    spec = dict(cfg.problem)
    kind = spec.pop("kind")
    try:
        if kind == "quadratic":
            if "targets" not in spec:
                raise ConfigError("[problem] quadratic needs targets")
            return quadratic_problem(
                spec["targets"],
                spec.get("weights"),
                float(spec.get("noise_std", 0.0)),
                spec.get("optimum"),
                name=cfg.name or "quadratic",
            )
        if kind == "mclr_synthetic":
            synthetic = SyntheticSpec(
                n_clients=int(spec.get("n_clients", 10)),
                samples_per_client=int(spec.get("samples_per_client", 100)),
                features=int(spec.get("features", 60)),
                classes=int(spec.get("classes", 10)),
                heterogeneity=str(spec.get("heterogeneity", "iid")),
                labels_per_client=int(spec.get("labels_per_client", 3)),
                seed=int(spec.get("data_seed", cfg.seed)),
            )
            return mclr_problem(generate_synthetic(synthetic), synthetic.classes, float(spec.get("mu", 0.0)))
        paths = spec.get("paths") or []
        if not paths or "classes" not in spec:
            raise ConfigError("[problem] mclr_csv needs paths and classes")
        return mclr_problem([load_csv_dataset(p) for p in paths], int(spec["classes"]), float(spec.get("mu", 0.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[problem] {exc}") from exc


def build_sets(cfg: RunConfig, dim: int, n: int) -> tuple[FeasibleSet, list[FeasibleSet] | None]:
    global_set = build_set(cfg.feasible_set, dim)
    if cfg.client_sets is None:
        return global_set, None
    if len(cfg.client_sets) != n:
        raise ConfigError(f"client_sets has {len(cfg.client_sets)} entries for {n} clients")
    return global_set, [build_set(s, dim) for s in cfg.client_sets]


def initial_point(cfg: RunConfig, dim: int) -> np.ndarray | None:
    if cfg.initial_point is None:
        return None
    try:
        return as_vec(cfg.initial_point, dim, name="initial_point")
    except (DimensionError, NumericalError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_grid(items: list[str]) -> dict[str, list]:
    """Parse CLI grid items like `lambda0=0.001,0.01` into a sweep grid."""
    grid: dict[str, list] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in SWEEP_KEYS:
            raise ConfigError(f"grid entry {item!r} must look like KEY=v1,v2 with KEY in {list(SWEEP_KEYS)}")
        cast = int if key == "seed" else float
        try:
            grid[key] = [cast(v) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"grid entry {item!r}: {exc}") from exc
        if not grid[key]:
            raise ConfigError(f"grid entry {item!r} has no values")
    return grid
