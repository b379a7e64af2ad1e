"""Constraint sets with closed-form linear minimization oracles.

Ties are broken towards the lowest coordinate index and a zero direction
returns the canonical vertex of each set, so every oracle is deterministic.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, DimensionError

MEMBERSHIP_TOL = 1e-9


class FeasibleSet(ABC):
    kind: str = ""
    dim: int

    @abstractmethod
    def lmo(self, g: np.ndarray) -> np.ndarray:
        """Return a minimizer of <g, x> over the set."""

    @abstractmethod
    def residual(self, x: np.ndarray) -> float:
        """Constraint violation of x, zero inside the set."""

    @abstractmethod
    def diameter(self) -> float:
        pass

    @abstractmethod
    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Random feasible points, roughly half of them extreme points. Shape (count, dim)."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        pass

    def contains(self, x: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
        self._check_dim(x)
        return self.residual(x) <= tol

    def canonical_vertex(self) -> np.ndarray:
        return self.lmo(np.zeros(self.dim))

    def _check_dim(self, v: np.ndarray) -> None:
        if v.shape != (self.dim,):
            raise DimensionError(f"{self.kind} of dim {self.dim} got vector of shape {v.shape}")

    def _split(self, count: int) -> tuple[int, int]:
        extreme = count // 2
        return extreme, count - extreme


@dataclass(frozen=True)
class L1Ball(FeasibleSet):
    radius: float
    dim: int
    kind: str = field(default="l1_ball", init=False)

    def __post_init__(self) -> None:
        _positive("radius", self.radius)
        _positive_dim(self.dim)

    def lmo(self, g: np.ndarray) -> np.ndarray:
        self._check_dim(g)
        s = np.zeros(self.dim)
        k = int(np.argmax(np.abs(g)))
        s[k] = -self.radius if g[k] > 0 else self.radius
        return s

    def residual(self, x: np.ndarray) -> float:
        return max(0.0, float(np.sum(np.abs(x))) - self.radius)

    def diameter(self) -> float:
        return 2.0 * self.radius

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        extreme, interior = self._split(count)
        points = np.zeros((count, self.dim))
        k = rng.integers(0, self.dim, size=extreme)
        signs = rng.choice([-1.0, 1.0], size=extreme)
        points[np.arange(extreme), k] = signs * self.radius
        weights = rng.dirichlet(np.ones(self.dim), size=interior)
        scale = rng.random((interior, 1)) * self.radius
        signs = rng.choice([-1.0, 1.0], size=(interior, self.dim))
        points[extreme:] = scale * weights * signs
        return points

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "radius": self.radius}


@dataclass(frozen=True)
class L2Ball(FeasibleSet):
    radius: float
    dim: int
    kind: str = field(default="l2_ball", init=False)

    def __post_init__(self) -> None:
        _positive("radius", self.radius)
        _positive_dim(self.dim)

    def lmo(self, g: np.ndarray) -> np.ndarray:
        self._check_dim(g)
        norm = float(np.linalg.norm(g))
        if norm == 0.0:
            s = np.zeros(self.dim)
            s[0] = self.radius
            return s
        return -self.radius * g / norm

    def residual(self, x: np.ndarray) -> float:
        return max(0.0, float(np.linalg.norm(x)) - self.radius)

    def diameter(self) -> float:
        return 2.0 * self.radius

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        extreme, interior = self._split(count)
        z = rng.standard_normal((count, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        radii = np.full((count, 1), self.radius)
        radii[extreme:, 0] = self.radius * rng.random(interior) ** (1.0 / self.dim)
        # keep strictly inside so round-off never produces a boundary violation
        return z * radii * (1.0 - 1e-15)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "radius": self.radius}


@dataclass(frozen=True)
class Box(FeasibleSet):
    lo: np.ndarray
    hi: np.ndarray
    kind: str = field(default="box", init=False)

    def __post_init__(self) -> None:
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ConfigError(f"box bounds have shapes {lo.shape} and {hi.shape}")
        if lo.size == 0:
            raise ConfigError("box needs at least one coordinate")
        if not np.all(lo < hi):
            raise ConfigError("box requires lo < hi in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return int(self.lo.shape[0])

    def lmo(self, g: np.ndarray) -> np.ndarray:
        self._check_dim(g)
        # g_k = 0 picks lo, so a zero direction returns the lower corner
        return np.where(g < 0, self.hi, self.lo)

    def residual(self, x: np.ndarray) -> float:
        below = np.max(self.lo - x, initial=0.0)
        above = np.max(x - self.hi, initial=0.0)
        return float(max(below, above))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        extreme, interior = self._split(count)
        corners = np.where(rng.random((extreme, self.dim)) < 0.5, self.lo, self.hi)
        inside = self.lo + rng.random((interior, self.dim)) * (self.hi - self.lo)
        return np.vstack([corners, inside])

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self) -> int:
        return hash((self.kind, self.lo.tobytes(), self.hi.tobytes()))


@dataclass(frozen=True)
class Simplex(FeasibleSet):
    scale: float
    dim: int
    kind: str = field(default="simplex", init=False)

    def __post_init__(self) -> None:
        _positive("scale", self.scale)
        if self.dim < 2:
            raise ConfigError("a simplex needs dimension >= 2 to have a positive diameter")

    def lmo(self, g: np.ndarray) -> np.ndarray:
        self._check_dim(g)
        s = np.zeros(self.dim)
        s[int(np.argmin(g))] = self.scale
        return s

    def residual(self, x: np.ndarray) -> float:
        negative = float(np.max(-x, initial=0.0))
        return max(negative, abs(float(np.sum(x)) - self.scale))

    def diameter(self) -> float:
        return self.scale * math.sqrt(2.0)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        extreme, interior = self._split(count)
        points = np.zeros((count, self.dim))
        points[np.arange(extreme), rng.integers(0, self.dim, size=extreme)] = self.scale
        points[extreme:] = self.scale * rng.dirichlet(np.ones(self.dim), size=interior)
        return points

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "scale": self.scale}


def lmo(feasible_set: FeasibleSet, g: np.ndarray) -> np.ndarray:
    return feasible_set.lmo(g)


def membership(feasible_set: FeasibleSet, x: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
    return feasible_set.contains(x, tol)


def diameter(feasible_set: FeasibleSet) -> float:
    return feasible_set.diameter()


def is_extreme_point(feasible_set: FeasibleSet, x: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
    if isinstance(feasible_set, L1Ball):
        nonzero = np.flatnonzero(np.abs(x) > tol)
        return nonzero.size == 1 and abs(abs(x[nonzero[0]]) - feasible_set.radius) <= tol
    if isinstance(feasible_set, L2Ball):
        return abs(float(np.linalg.norm(x)) - feasible_set.radius) <= tol
    if isinstance(feasible_set, Box):
        at_bound = (np.abs(x - feasible_set.lo) <= tol) | (np.abs(x - feasible_set.hi) <= tol)
        return bool(np.all(at_bound))
    if isinstance(feasible_set, Simplex):
        nonzero = np.flatnonzero(np.abs(x) > tol)
        return nonzero.size == 1 and abs(x[nonzero[0]] - feasible_set.scale) <= tol
    raise TypeError(f"no extreme-point test for {type(feasible_set).__name__}")


def build_set(spec: dict[str, Any], dim: int) -> FeasibleSet:
    """Build a set from its config section, e.g. {"kind": "l1_ball", "radius": 10}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    allowed = {
        "l1_ball": {"radius"},
        "l2_ball": {"radius"},
        "box": {"lo", "hi"},
        "simplex": {"scale"},
    }
    if kind not in allowed:
        raise ConfigError(f"unknown feasible set kind {kind!r}; expected one of {sorted(allowed)}")
    unknown = set(spec) - allowed[kind]
    missing = allowed[kind] - set(spec)
    if unknown:
        raise ConfigError(f"unknown keys for {kind}: {sorted(unknown)}")
    if missing:
        raise ConfigError(f"missing keys for {kind}: {sorted(missing)}")
    try:
        if kind == "l1_ball":
            return L1Ball(radius=float(spec["radius"]), dim=dim)
        if kind == "l2_ball":
            return L2Ball(radius=float(spec["radius"]), dim=dim)
        if kind == "simplex":
            return Simplex(scale=float(spec["scale"]), dim=dim)
        return Box(lo=_broadcast(spec["lo"], dim, "lo"), hi=_broadcast(spec["hi"], dim, "hi"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} parameters: {exc}") from exc


def _broadcast(value, dim: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64).reshape(-1)
    if arr.size == 1:
        return np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ConfigError(f"box {name} has {arr.size} entries, problem dimension is {dim}")
    return arr


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"{name} must be a positive finite number, got {value!r}")


def _positive_dim(dim: int) -> None:
    if dim < 1:
        raise ConfigError(f"dimension must be >= 1, got {dim}")
