"""Round-synchronous federated Frank-Wolfe.

Within a round every client reads the previous server average and its own
slot only; the coordinator commits all updates afterwards and recomputes
the server average as the exact mean over all clients.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContainmentError, DimensionError, InfeasiblePointError
from .feasible_sets import MEMBERSHIP_TOL, FeasibleSet
from .metrics import MetricsContext, RoundMetrics, evaluate_round, surrogate_gap
from .objectives import ClientObjective, Problem, StochasticOracle
from .scheduler import Schedule
from .vectors import (
    STREAM_PARTICIPATION,
    STREAM_SAMPLE,
    ClientSlot,
    FederationState,
    RngStream,
    convex_combine,
)

logger = logging.getLogger(__name__)

FEDFW = "fedfw"
FEDFW_PLUS = "fedfw_plus"
FEDFW_STO = "fedfw_sto"
NAIVE_AVG_FW = "naive_avg_fw"
ALGORITHMS = (FEDFW, FEDFW_PLUS, FEDFW_STO, NAIVE_AVG_FW)

CONTAINMENT_SAMPLES = 1000
RECURSION_TOL = 1e-9


@dataclass(frozen=True)
class ClientUpdate:
    index: int
    x: np.ndarray
    y: np.ndarray
    d: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class ParticipationPolicy:
    probability: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.probability <= 1.0:
            raise ConfigError(f"participation must lie in (0, 1], got {self.probability!r}")

    def active(self, round_index: int, n: int) -> list[bool]:
        if self.probability == 1.0:
            return [True] * n
        return [
            bool(RngStream(self.seed, i, round_index, STREAM_PARTICIPATION).generator().random() < self.probability)
            for i in range(n)
        ]


def _move(slot: ClientSlot, g: np.ndarray, eta: float, y: np.ndarray, d: np.ndarray) -> ClientUpdate:
    s = slot.feasible_set.lmo(g)
    return ClientUpdate(index=slot.index, x=convex_combine(slot.x, s, eta), y=y, d=d, s=s)


def client_step_fedfw(
    slot: ClientSlot, x_bar: np.ndarray, eta: float, lam: float, client: ClientObjective, n: int
) -> ClientUpdate:
    g = client.grad(slot.x) / n + lam * (slot.x - x_bar)
    return _move(slot, g, eta, slot.y, slot.d)


def client_step_fedfw_plus(
    slot: ClientSlot, x_bar: np.ndarray, eta: float, lam: float, lambda0: float, client: ClientObjective, n: int
) -> ClientUpdate:
    offset = slot.x - x_bar
    y = slot.y + lambda0 * offset
    g = client.grad(slot.x) / n + lam * offset + y
    return _move(slot, g, eta, y, slot.d)


def update_estimator(d: np.ndarray, rho: float, sample: np.ndarray) -> np.ndarray:
    return (1.0 - rho) * d + rho * sample


def client_step_fedfw_sto(
    slot: ClientSlot,
    x_bar: np.ndarray,
    eta: float,
    lam: float,
    rho: float,
    oracle: StochasticOracle,
    n: int,
    round_index: int,
) -> ClientUpdate:
    d = update_estimator(slot.d, rho, oracle.grad(slot.x, round_index) / n)
    g = d + lam * (slot.x - x_bar)
    return _move(slot, g, eta, slot.y, d)


def client_step_naive(slot: ClientSlot, x_bar: np.ndarray, eta: float, client: ClientObjective) -> ClientUpdate:
    """Local FW step taken from the server average, as plain model averaging would."""
    s = slot.feasible_set.lmo(client.grad(x_bar))
    return ClientUpdate(index=slot.index, x=convex_combine(x_bar, s, eta), y=slot.y, d=slot.d, s=s)


def initial_state(
    global_set: FeasibleSet, n: int, x0: np.ndarray | None = None, client_sets: Sequence[FeasibleSet] | None = None
) -> FederationState:
    start = global_set.canonical_vertex() if x0 is None else np.array(x0, dtype=np.float64)
    if start.shape != (global_set.dim,):
        raise DimensionError(f"initial point has shape {start.shape}, expected ({global_set.dim},)")
    if not global_set.contains(start):
        raise InfeasiblePointError("initial point lies outside the feasible set")
    state = FederationState.at_point(start, [global_set] * n)
    if client_sets is not None:
        assign_split_constraints(state, client_sets, global_set)
    return state


def assign_split_constraints(
    state: FederationState,
    sets: Sequence[FeasibleSet],
    global_set: FeasibleSet,
    seed: int = 0,
    samples: int = CONTAINMENT_SAMPLES,
) -> None:
    """Give each client its own superset D_i of D, checked on sampled points of D."""
    if len(sets) != state.n:
        raise ConfigError(f"{len(sets)} client sets for {state.n} clients")
    for i, s in enumerate(sets):
        if s.dim != global_set.dim:
            raise DimensionError(f"client {i} set has dim {s.dim}, global set has {global_set.dim}")
        points = global_set.sample(RngStream(seed, i, 0, STREAM_SAMPLE).generator(), samples)
        worst = max(s.residual(p) for p in points)
        if worst > MEMBERSHIP_TOL:
            raise ContainmentError(
                f"client {i} set {s.to_dict()} does not contain the global set (worst residual {worst:.3e})"
            )
        if not s.contains(state.clients[i].x):
            raise InfeasiblePointError(f"client {i} model is outside its own set")
    for slot, s in zip(state.clients, sets):
        slot.feasible_set = s


def run_round(
    state: FederationState,
    algorithm: str,
    schedule: Schedule,
    policy: ParticipationPolicy,
    problem: Problem,
    ctx: MetricsContext,
    oracles: Sequence[StochasticOracle] | None = None,
    executor: ThreadPoolExecutor | None = None,
    verify: bool = False,
    record: bool = True,
) -> RoundMetrics | None:
    """Advance one round. With record=False no metrics are evaluated and None is returned."""
    t = state.round
    eta, lam, rho = schedule.at(t)
    n = state.n
    x_bar = state.x_bar
    step_gap = surrogate_gap(state, problem, lam) if record else None
    active = policy.active(t, n)
    chosen = [slot for slot, on in zip(state.clients, active) if on]

    def step(slot: ClientSlot) -> ClientUpdate:
        client = problem.clients[slot.index]
        if algorithm == FEDFW:
            return client_step_fedfw(slot, x_bar, eta, lam, client, n)
        if algorithm == FEDFW_PLUS:
            return client_step_fedfw_plus(slot, x_bar, eta, lam, schedule.lambda0, client, n)
        if algorithm == FEDFW_STO:
            if rho is None or oracles is None:
                raise ConfigError("fedfw_sto needs a rho schedule and stochastic oracles")
            return client_step_fedfw_sto(slot, x_bar, eta, lam, rho, oracles[slot.index], n, t)
        if algorithm == NAIVE_AVG_FW:
            return client_step_naive(slot, x_bar, eta, client)
        raise ConfigError(f"unknown algorithm {algorithm!r}")

    if executor is not None and len(chosen) > 1:
        updates = list(executor.map(step, chosen))
    else:
        updates = [step(slot) for slot in chosen]

    slack = None
    if updates:
        for u in updates:
            slot = state.clients[u.index]
            slot.x, slot.y, slot.d = u.x, u.y, u.d
        previous = x_bar
        state.x_bar = state.exact_mean()
        if verify and len(updates) == n:
            recursion = (1.0 - eta) * previous + eta * np.mean(np.stack([u.s for u in updates]), axis=0)
            slack = float(np.max(np.abs(recursion - state.x_bar)))
            if slack > RECURSION_TOL:
                logger.warning("round %s: server recursion differs from exact mean by %.3e", t, slack)
    else:
        logger.warning("round %s: no client participated, models unchanged", t)

    state.round = t + 1
    state.check_finite()
    if not record:
        return None
    return evaluate_round(state, problem, ctx, t, eta, lam, rho, len(updates), step_gap, slack)


class Federation:
    """Owns the state, the participation policy and the worker pool of one run."""

    def __init__(
        self,
        problem: Problem,
        schedule: Schedule,
        algorithm: str,
        ctx: MetricsContext,
        participation: float = 1.0,
        seed: int = 0,
        batch_size: int | None = None,
        workers: int = 1,
        verify: bool = False,
        x0: np.ndarray | None = None,
        client_sets: Sequence[FeasibleSet] | None = None,
    ) -> None:
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {list(ALGORITHMS)}")
        if ctx.global_set.dim != problem.dim:
            raise DimensionError(f"feasible set dim {ctx.global_set.dim} != problem dim {problem.dim}")
        self.problem = problem
        self.schedule = schedule
        self.algorithm = algorithm
        self.ctx = ctx
        self.verify = verify
        self.policy = ParticipationPolicy(participation, seed)
        self.state = initial_state(ctx.global_set, problem.n, x0, client_sets)
        self.oracles = None
        if algorithm == FEDFW_STO:
            if schedule.at(1).rho is None:
                raise ConfigError("fedfw_sto needs the stochastic regime or a rho_override")
            batch = batch_size or 1
            self.oracles = [StochasticOracle(c, batch, seed, i) for i, c in enumerate(problem.clients)]
        self._executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def step(self, record: bool = True) -> RoundMetrics | None:
        return run_round(
            self.state,
            self.algorithm,
            self.schedule,
            self.policy,
            self.problem,
            self.ctx,
            oracles=self.oracles,
            executor=self._executor,
            verify=self.verify,
            record=record,
        )

    def run(self, rounds: int, on_round: Callable[[RoundMetrics], None] | None = None) -> list[RoundMetrics]:
        history = []
        for _ in range(rounds):
            m = self.step()
            history.append(m)
            if on_round is not None:
                on_round(m)
        return history

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> Federation:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_naive_baseline(
    problem: Problem, feasible_set: FeasibleSet, rounds: int, x0: np.ndarray | None = None
) -> np.ndarray:
    """Averaged local FW steps from a shared start. Returns x_bar^1 .. x_bar^{rounds+1} as rows."""
    x_bar = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=np.float64)
    state = FederationState.at_point(x_bar, [feasible_set] * problem.n)
    trajectory = [state.x_bar.copy()]
    for t in range(1, rounds + 1):
        eta = 2.0 / (t + 1)
        updates = [client_step_naive(slot, state.x_bar, eta, c) for slot, c in zip(state.clients, problem.clients)]
        for u in updates:
            state.clients[u.index].x = u.x
        state.x_bar = state.exact_mean()
        trajectory.append(state.x_bar.copy())
    return np.stack(trajectory)
