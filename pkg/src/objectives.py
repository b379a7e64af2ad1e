"""Finite-sum objectives F = (1/n) sum_i f_i and their gradient oracles."""

from __future__ import annotations

import logging
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.special import logsumexp, softmax

from .errors import ConfigError, DimensionError, EmptyDatasetError
from .feasible_sets import Box, FeasibleSet, L2Ball
from .vectors import STREAM_GRADIENT, RngStream

logger = logging.getLogger(__name__)

EIGEN_RESTARTS = 50
DENSE_EIGEN_MAX = 8
STREAM_DATA = 7


class ClientObjective(ABC):
    dim: int

    @property
    @abstractmethod
    def sample_count(self) -> int:
        pass

    @property
    def is_convex(self) -> bool:
        return True

    @abstractmethod
    def value(self, x: np.ndarray) -> float:
        pass

    @abstractmethod
    def grad(self, x: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def stochastic_grad(self, x: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def smoothness(self) -> float:
        pass

    def minimum_over(self, feasible_set: FeasibleSet) -> float | None:
        """Exact minimum of this client over the set when a closed form exists."""
        return None

    def _check(self, x: np.ndarray) -> None:
        if x.shape != (self.dim,):
            raise DimensionError(f"model has shape {x.shape}, objective expects ({self.dim},)")


@dataclass(frozen=True)
class QuadraticClient(ClientObjective):
    """f(x) = weight * ||x - target||^2. A negative weight gives a concave client."""

    target: np.ndarray
    weight: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        target = np.array(self.target, dtype=np.float64).reshape(-1)
        if target.size == 0:
            raise ConfigError("quadratic target must be non-empty")
        if self.weight == 0 or not math.isfinite(self.weight):
            raise ConfigError(f"quadratic weight must be finite and non-zero, got {self.weight!r}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return int(self.target.shape[0])

    @property
    def sample_count(self) -> int:
        return 1

    @property
    def is_convex(self) -> bool:
        return self.weight > 0

    def value(self, x: np.ndarray) -> float:
        self._check(x)
        r = x - self.target
        return float(self.weight * np.dot(r, r))

    def grad(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return 2.0 * self.weight * (x - self.target)

    def stochastic_grad(self, x: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        g = self.grad(x)
        if self.noise_std == 0.0:
            return g
        # mean of batch_size independent zero-mean draws
        return g + (self.noise_std / math.sqrt(batch_size)) * rng.standard_normal(self.dim)

    def smoothness(self) -> float:
        return 2.0 * abs(self.weight)

    def minimum_over(self, feasible_set: FeasibleSet) -> float | None:
        a = self.target
        if isinstance(feasible_set, L2Ball):
            norm = float(np.linalg.norm(a))
            if self.weight > 0:
                return self.weight * max(0.0, norm - feasible_set.radius) ** 2
            return self.weight * (norm + feasible_set.radius) ** 2
        if isinstance(feasible_set, Box):
            if self.weight > 0:
                r = np.clip(a, feasible_set.lo, feasible_set.hi) - a
                return float(self.weight * np.dot(r, r))
            far = np.maximum(np.abs(a - feasible_set.lo), np.abs(feasible_set.hi - a))
            return float(self.weight * np.dot(far, far))
        return None

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, QuadraticClient)
            and np.array_equal(self.target, other.target)
            and self.weight == other.weight
            and self.noise_std == other.noise_std
        )

    def __hash__(self) -> int:
        return hash((self.target.tobytes(), self.weight, self.noise_std))


@dataclass(frozen=True)
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise DimensionError(f"features must be a 2-D array, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise DimensionError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def label_set(self) -> set[int]:
        return {int(v) for v in np.unique(self.labels)}


@dataclass(frozen=True, eq=False)
class MclrClient(ClientObjective):
    """Multiclass logistic regression, averaged over the client's samples.

    The model is the row-major flattening of a (classes, features + 1) matrix
    whose last column is the bias. mu adds (mu / 2) * ||x||^2.
    """

    data: ClientDataset
    classes: int
    mu: float = 0.0
    _augmented: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ConfigError("MCLR needs at least two classes")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        labels = self.data.labels
        if labels.size and (labels.min() < 0 or labels.max() >= self.classes):
            raise ConfigError(f"labels must lie in [0, {self.classes})")
        m = self.data.size
        augmented = np.hstack([self.data.features, np.ones((m, 1))])
        object.__setattr__(self, "_augmented", augmented)

    @property
    def features(self) -> int:
        return int(self.data.features.shape[1])

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.classes * (self.features + 1)

    @property
    def sample_count(self) -> int:
        return self.data.size

    def _logits(self, x: np.ndarray, rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        self._check(x)
        if self.data.size == 0:
            raise EmptyDatasetError("client has no samples")
        A = self._augmented if rows is None else self._augmented[rows]
        W = x.reshape(self.classes, self.features + 1)
        return A, A @ W.T

    def _loss(self, logits: np.ndarray, labels: np.ndarray) -> float:
        picked = logits[np.arange(labels.shape[0]), labels]
        return float(np.mean(logsumexp(logits, axis=1) - picked))

    def _grad(self, A: np.ndarray, logits: np.ndarray, labels: np.ndarray, x: np.ndarray) -> np.ndarray:
        P = softmax(logits, axis=1)
        P[np.arange(labels.shape[0]), labels] -= 1.0
        G = P.T @ A / labels.shape[0]
        return G.ravel() + self.mu * x

    def value(self, x: np.ndarray) -> float:
        _, logits = self._logits(x)
        return self._loss(logits, self.data.labels) + 0.5 * self.mu * float(np.dot(x, x))

    def grad(self, x: np.ndarray) -> np.ndarray:
        A, logits = self._logits(x)
        return self._grad(A, logits, self.data.labels, x)

    def stochastic_grad(self, x: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        m = self.data.size
        if m == 0:
            raise EmptyDatasetError("cannot sample a minibatch from an empty dataset")
        if batch_size >= m:
            return self.grad(x)
        rows = rng.integers(0, m, size=batch_size)
        A, logits = self._logits(x, rows)
        return self._grad(A, logits, self.data.labels[rows], x)

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        _, logits = self._logits(x)
        return softmax(logits, axis=1)

    def accuracy(self, x: np.ndarray) -> float:
        _, logits = self._logits(x)
        return float(np.mean(np.argmax(logits, axis=1) == self.data.labels))

    def smoothness(self) -> float:
        m = self.data.size
        if m == 0:
            return self.mu
        gram = self._augmented.T @ self._augmented / m
        return 0.5 * top_eigenvalue(gram) + self.mu


@dataclass
class Problem:
    """F(x) = (1/n) sum_i f_i(x), with an optional analytically known minimizer over D."""

    clients: list[ClientObjective]
    name: str = "problem"
    optimum: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.clients:
            raise ConfigError("a problem needs at least one client")
        dims = {c.dim for c in self.clients}
        if len(dims) != 1:
            raise DimensionError(f"clients disagree on model dimension: {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    @property
    def is_convex(self) -> bool:
        return all(c.is_convex for c in self.clients)

    def value(self, x: np.ndarray) -> float:
        return sum(c.value(x) for c in self.clients) / self.n

    def grad(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(self.dim)
        for c in self.clients:
            total += c.grad(x)
        return total / self.n

    def client_average(self, models: Sequence[np.ndarray]) -> float:
        """(1/n) sum_i f_i(x_i): the separable part of the surrogate."""
        return sum(c.value(x) for c, x in zip(self.clients, models)) / self.n


@dataclass(frozen=True)
class StochasticOracle:
    client: ClientObjective
    batch_size: int
    seed: int
    client_id: int

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def grad(self, x: np.ndarray, round_index: int) -> np.ndarray:
        if self.client.sample_count == 0:
            raise EmptyDatasetError(f"client {self.client_id} has an empty dataset")
        rng = RngStream(self.seed, self.client_id, round_index, STREAM_GRADIENT).generator()
        return self.client.stochastic_grad(x, self.batch_size, rng)


def grad(client: ClientObjective, x: np.ndarray) -> np.ndarray:
    return client.grad(x)


def stochastic_grad(oracle: StochasticOracle, x: np.ndarray, round_index: int) -> np.ndarray:
    return oracle.grad(x, round_index)


def smoothness_bound(problem: Problem) -> float:
    return max(c.smoothness() for c in problem.clients)


def top_eigenvalue(M: np.ndarray, iterations: int = EIGEN_RESTARTS, tol: float = 0.0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Small matrices are solved densely; larger ones run Lanczos from a fixed
    start vector. If Lanczos does not converge within `iterations` restarts
    the trace, an upper bound, is returned instead.
    """
    size = M.shape[0]
    if not np.any(M):
        return 0.0
    if size <= DENSE_EIGEN_MAX:
        return float(np.linalg.eigvalsh(M)[-1])
    v0 = np.random.default_rng(0).standard_normal(size)
    try:
        top = eigsh(M, k=1, which="LA", v0=v0, maxiter=iterations, tol=tol, return_eigenvectors=False)
        return float(top[0])
    except ArpackNoConvergence:
        fallback = float(np.trace(M))
        logger.warning(
            "Lanczos did not converge in %s restarts for a %sx%s matrix; using trace bound %.6g",
            iterations,
            size,
            size,
            fallback,
        )
        return fallback


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for k in range(x.shape[0]):
        step = np.zeros_like(x)
        step[k] = h
        g[k] = (f(x + step) - f(x - step)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class SyntheticSpec:
    n_clients: int
    samples_per_client: int
    features: int = 60
    classes: int = 10
    heterogeneity: str = "iid"
    labels_per_client: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clients < 1 or self.samples_per_client < 1:
            raise ConfigError("synthetic data needs at least one client and one sample per client")
        if self.features < 1 or self.classes < 2:
            raise ConfigError("synthetic data needs features >= 1 and classes >= 2")
        if self.heterogeneity not in ("iid", "noniid"):
            raise ConfigError(f"heterogeneity must be 'iid' or 'noniid', got {self.heterogeneity!r}")
        if self.heterogeneity == "noniid" and not 1 <= self.labels_per_client <= self.classes:
            raise ConfigError(
                f"labels_per_client={self.labels_per_client} is infeasible with {self.classes} classes"
            )


def generate_synthetic(spec: SyntheticSpec, max_draws: int = 200_000) -> list[ClientDataset]:
    """Gaussian features with labels from a softmax model shared by all clients."""
    root = RngStream(spec.seed, 0, 0, STREAM_DATA).generator()
    W = root.standard_normal((spec.classes, spec.features))
    b = root.standard_normal(spec.classes)

    def draw(rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        X = rng.standard_normal((count, spec.features))
        return X, np.argmax(X @ W.T + b, axis=1)

    datasets = []
    for i in range(spec.n_clients):
        rng = RngStream(spec.seed, i + 1, 0, STREAM_DATA).generator()
        m = spec.samples_per_client
        if spec.heterogeneity == "iid":
            X, y = draw(rng, m)
            datasets.append(ClientDataset(X, y))
            continue

        k = spec.labels_per_client
        own = np.sort(rng.choice(spec.classes, size=k, replace=False))
        quota = {int(label): m // k + (1 if j < m % k else 0) for j, label in enumerate(own)}
        rows_x: list[np.ndarray] = []
        rows_y: list[np.ndarray] = []
        drawn = 0
        while any(q > 0 for q in quota.values()):
            if drawn >= max_draws:
                raise ConfigError(
                    f"client {i}: could not fill labels {own.tolist()} within {max_draws} draws"
                )
            X, y = draw(rng, max(4 * m, 256))
            drawn += X.shape[0]
            for label, left in quota.items():
                if left <= 0:
                    continue
                hits = np.flatnonzero(y == label)[:left]
                rows_x.append(X[hits])
                rows_y.append(y[hits])
                quota[label] = left - hits.shape[0]
        X = np.vstack(rows_x)
        y = np.concatenate(rows_y)
        order = rng.permutation(y.shape[0])
        datasets.append(ClientDataset(X[order], y[order]))
    return datasets


def load_csv_dataset(path: str) -> ClientDataset:
    """Read `label,feat1,...,featd` rows (no header)."""
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if table.size == 0:
        return ClientDataset(np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
    if table.shape[1] < 2:
        raise ConfigError(f"{path}: expected a label column and at least one feature column")
    labels = table[:, 0]
    if not np.all(labels == np.round(labels)):
        raise ConfigError(f"{path}: labels must be integers")
    return ClientDataset(table[:, 1:], labels.astype(np.int64))


def mclr_problem(datasets: Sequence[ClientDataset], classes: int, mu: float = 0.0, name: str = "mclr") -> Problem:
    widths = {d.features.shape[1] for d in datasets if d.size}
    if len(widths) > 1:
        raise DimensionError(f"client datasets have different feature counts: {sorted(widths)}")
    return Problem(clients=[MclrClient(d, classes, mu) for d in datasets], name=name)


def quadratic_problem(
    targets: Sequence[Sequence[float]],
    weights: Sequence[float] | None = None,
    noise_std: float = 0.0,
    optimum: Sequence[float] | None = None,
    name: str = "quadratic",
) -> Problem:
    weights = list(weights) if weights is not None else [1.0] * len(targets)
    if len(weights) != len(targets):
        raise ConfigError(f"{len(targets)} quadratic targets but {len(weights)} weights")
    clients = [QuadraticClient(np.asarray(a, dtype=np.float64), float(w), noise_std) for a, w in zip(targets, weights)]
    x_star = None if optimum is None else np.asarray(optimum, dtype=np.float64).reshape(-1)
    return Problem(clients=clients, name=name, optimum=x_star)
