"""Dense vector helpers and the federation state shared by every algorithm.

Client models are 1-D float64 numpy arrays. The implied matrix X has the
client models as its columns; nothing stores it explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, StepSizeError

if TYPE_CHECKING:
    from .feasible_sets import FeasibleSet

# Tags that keep the per-(client, round) random streams of different consumers apart.
STREAM_GRADIENT = 0
STREAM_PARTICIPATION = 1
STREAM_SAMPLE = 3

_SEED_MASK = (1 << 64) - 1


def as_vec(values, dim: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} has non-finite entries")
    return arr


def convex_combine(a: np.ndarray, b: np.ndarray, eta: float) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}")
    if not 0.0 <= eta <= 1.0:
        raise StepSizeError(f"step size {eta!r} outside [0, 1]")
    return (1.0 - eta) * a + eta * b


def mean_model(models: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean(np.stack(models, axis=1), axis=1)


def consensus_distance_of(models: Sequence[np.ndarray]) -> float:
    X = np.stack(models, axis=1)
    centered = X - X.mean(axis=1, keepdims=True)
    return float(np.sqrt(np.sum(centered * centered)))


@dataclass(frozen=True)
class RngStream:
    """Random stream that is a pure function of (seed, client_id, round, tag)."""

    seed: int
    client_id: int
    round: int
    tag: int = STREAM_GRADIENT

    def generator(self) -> np.random.Generator:
        entropy = [self.seed & _SEED_MASK, self.client_id, self.round, self.tag]
        return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class ClientSlot:
    index: int
    x: np.ndarray
    feasible_set: "FeasibleSet"
    y: np.ndarray = field(default=None)  # type: ignore[assignment]
    d: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.y is None:
            self.y = np.zeros_like(self.x)
        if self.d is None:
            self.d = np.zeros_like(self.x)

    def copy(self) -> ClientSlot:
        return ClientSlot(
            index=self.index,
            x=self.x.copy(),
            feasible_set=self.feasible_set,
            y=self.y.copy(),
            d=self.d.copy(),
        )


@dataclass
class FederationState:
    clients: list[ClientSlot]
    x_bar: np.ndarray
    round: int = 1

    @classmethod
    def at_point(
        cls, x0: np.ndarray, sets: Iterable["FeasibleSet"], round_index: int = 1
    ) -> FederationState:
        clients = [ClientSlot(index=i, x=x0.copy(), feasible_set=s) for i, s in enumerate(sets)]
        if not clients:
            raise DimensionError("a federation needs at least one client")
        return cls(clients=clients, x_bar=x0.copy(), round=round_index)

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return int(self.x_bar.shape[0])

    def models(self) -> list[np.ndarray]:
        return [slot.x for slot in self.clients]

    def matrix(self) -> np.ndarray:
        return np.stack(self.models(), axis=1)

    def exact_mean(self) -> np.ndarray:
        return mean_model(self.models())

    def copy(self) -> FederationState:
        return FederationState(
            clients=[slot.copy() for slot in self.clients],
            x_bar=self.x_bar.copy(),
            round=self.round,
        )

    def check_finite(self) -> None:
        for slot in self.clients:
            if not (
                np.all(np.isfinite(slot.x)) and np.all(np.isfinite(slot.y)) and np.all(np.isfinite(slot.d))
            ):
                raise NumericalError(
                    f"non-finite iterate for client {slot.index} at round {self.round}",
                    round_index=self.round,
                )


def consensus_distance(state: FederationState) -> float:
    # Uses the exact mean of the client models, never the cached server average.
    return consensus_distance_of(state.models())
