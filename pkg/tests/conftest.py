import numpy as np
import pytest

from src.config import parse_config
from src.feasible_sets import Box
from src.objectives import quadratic_problem


def counterexample_dict(**overrides) -> dict:
    data = {
        "algorithm": "fedfw",
        "rounds": 50,
        "seed": 0,
        "schedule": {"regime": "convex", "lambda0": 1.0},
        "feasible_set": {"kind": "box", "lo": -1.0, "hi": 1.0},
        "problem": {"kind": "quadratic", "targets": [[3.0], [-1.0]], "weights": [1.0, 1.0], "optimum": [1.0]},
        "bounds": {"reference_iterations": 200},
    }
    data.update(overrides)
    return data


@pytest.fixture
def counterexample():
    return quadratic_problem([[3.0], [-1.0]], [1.0, 1.0], optimum=[1.0])


@pytest.fixture
def unit_box():
    return Box(lo=np.array([-1.0]), hi=np.array([1.0]))


@pytest.fixture
def make_config():
    def factory(**overrides):
        return parse_config(counterexample_dict(**overrides), name="test")

    return factory


@pytest.fixture(autouse=True)
def _isolated_dirs(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDFW_RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("FEDFW_DB_PATH", str(tmp_path / "data" / "runs.sqlite3"))
