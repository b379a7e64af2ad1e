"""Convergence measurements and the closed-form bound evaluators.

Nothing here mutates a FederationState.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasiblePointError
from .feasible_sets import MEMBERSHIP_TOL, FeasibleSet
from .objectives import Problem, StochasticOracle
from .vectors import FederationState, consensus_distance

logger = logging.getLogger(__name__)

GAP_TOL = 1e-9
REFERENCE_ITERATIONS = 10_000


@dataclass(frozen=True)
class BoundConstants:
    smoothness: float
    n: int
    diameter: float
    lambda0: float
    gradient_bound: float = 0.0
    init_gap: float | None = None
    sigma: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsContext:
    """What the per-round evaluator needs besides the state itself."""

    global_set: FeasibleSet
    constants: BoundConstants
    f_star: float | None = None
    convex_bounds: bool = False
    dual_norm: float | None = None


@dataclass(frozen=True)
class RoundMetrics:
    t: int
    objective: float
    fw_gap: float
    surrogate_gap: float
    step_gap: float
    consensus_distance: float
    surrogate_value: float
    residual: float | None
    surrogate_residual: float | None
    theorem1_bound: float | None
    objective_bound: float | None
    consensus_bound: float | None
    eta: float
    lam: float
    rho: float | None
    active_count: int
    feasible: bool
    recursion_slack: float | None = None


def fw_gap(problem: Problem, feasible_set: FeasibleSet, x: np.ndarray, check: bool = True) -> float:
    if check and not feasible_set.contains(x, MEMBERSHIP_TOL):
        raise InfeasiblePointError(f"FW gap requested at a point outside the set (residual {feasible_set.residual(x):.3e})")
    g = problem.grad(x)
    return float(np.dot(g, x - feasible_set.lmo(g)))


def penalized_gradients(state: FederationState, problem: Problem, lam: float) -> list[np.ndarray]:
    x_bar = state.exact_mean()
    n = state.n
    return [
        client.grad(slot.x) / n + lam * (slot.x - x_bar)
        for client, slot in zip(problem.clients, state.clients)
    ]


def surrogate_gap(state: FederationState, problem: Problem, lam: float) -> float:
    total = 0.0
    for g, slot in zip(penalized_gradients(state, problem, lam), state.clients):
        total += float(np.dot(g, slot.x - slot.feasible_set.lmo(g)))
    return total


def surrogate_value(state: FederationState, problem: Problem, lam: float) -> float:
    dist = consensus_distance(state)
    return problem.client_average(state.models()) + 0.5 * lam * dist * dist


def surrogate_smoothness(smoothness: float, n: int, lam: float) -> float:
    return smoothness / n + lam


def theorem1_surrogate_bound(c: BoundConstants, t: int) -> float:
    n, D = c.n, c.diameter
    return 2.0 * n * D * D * ((c.smoothness / n) / (t + 1) + c.lambda0 / math.sqrt(t + 1))


def theorem1_objective_bound(c: BoundConstants, t: int, dual_norm: float) -> float:
    """Bound on F(x_bar^t) - F* for the convex schedule."""
    n, D, L, lam0 = c.n, c.diameter, c.smoothness, c.lambda0
    optimization = 2.0 * n * D * D * ((L / n) / t + lam0 / math.sqrt(t))
    spread = (2.0 / (lam0 * math.sqrt(t))) * (dual_norm + D * math.sqrt(lam0 * (L / math.sqrt(t) + n * lam0)))
    return optimization + c.gradient_bound * spread


def theorem2_gap_bound(c: BoundConstants, T: int) -> float:
    if c.init_gap is None:
        raise ValueError("theorem2_gap_bound needs the initialization gap")
    D2 = c.diameter * c.diameter
    return (c.init_gap + c.n * D2 * c.lambda0 / 2.0) / T ** (1.0 / 3.0) + (c.smoothness * D2 / 2.0) / T ** (2.0 / 3.0)


def consensus_bound(c: BoundConstants, t: int, dual_norm: float) -> float:
    lam0, D = c.lambda0, c.diameter
    return (2.0 / (lam0 * math.sqrt(t + 1))) * (dual_norm + D * math.sqrt(lam0 * (c.smoothness + c.n * lam0)))


def theorem3_constants(c: BoundConstants, init_mismatch_sq: float) -> tuple[float, float]:
    """Return (C, Q) for the stochastic schedule. init_mismatch_sq is ||grad F_hat(X^1) - D^1||^2."""
    n, D, L = c.n, c.diameter, c.smoothness
    sigma2 = (c.sigma or 0.0) ** 2
    Q = max(init_mismatch_sq * 7.0 ** (2.0 / 3.0), 16.0 * n * sigma2 + 81.0 * L * L * D * D / n)
    C = 40.5 * n * D * D * (L / n + c.lambda0) + 9.0 * D * math.sqrt(Q)
    return C, Q


def theorem3_objective_bound(c: BoundConstants, t: int, C: float, dual_norm: float) -> float:
    k = 9.0 ** (1.0 / 3.0) * C
    lam0 = c.lambda0
    consensus = 2.0 * dual_norm / (lam0 * math.sqrt(t + 7)) + 2.0 * math.sqrt(2.0 * k / lam0) / (t + 7) ** (5.0 / 12.0)
    return k / (t + 7) ** (1.0 / 3.0) + c.gradient_bound * consensus


def centralized_frank_wolfe(
    problem: Problem,
    feasible_set: FeasibleSet,
    x0: np.ndarray | None = None,
    iterations: int = REFERENCE_ITERATIONS,
    tol: float = 0.0,
) -> tuple[np.ndarray, float]:
    """Plain FW on F with step 2/(k+2). Returns the best point visited and its value."""
    x = feasible_set.canonical_vertex() if x0 is None else np.array(x0, dtype=np.float64)
    best_x, best_val = x.copy(), problem.value(x)
    for k in range(iterations):
        g = problem.grad(x)
        s = feasible_set.lmo(g)
        if float(np.dot(g, x - s)) <= tol:
            break
        eta = 2.0 / (k + 2)
        x = (1.0 - eta) * x + eta * s
        val = problem.value(x)
        if val < best_val:
            best_x, best_val = x.copy(), val
    return best_x, best_val


def reference_optimum(problem: Problem, feasible_set: FeasibleSet, iterations: int = REFERENCE_ITERATIONS) -> tuple[np.ndarray, float]:
    if problem.optimum is not None:
        return problem.optimum, problem.value(problem.optimum)
    return centralized_frank_wolfe(problem, feasible_set, iterations=iterations)


def gradient_bound_G(
    problem: Problem,
    feasible_set: FeasibleSet,
    smoothness: float,
    x_hat: np.ndarray | None = None,
    iterations: int = REFERENCE_ITERATIONS,
) -> float:
    if x_hat is None:
        x_hat, _ = reference_optimum(problem, feasible_set, iterations)
    return smoothness * feasible_set.diameter() + problem.n * float(np.linalg.norm(problem.grad(x_hat)))


def estimate_init_gap(
    problem: Problem,
    feasible_set: FeasibleSet,
    x1: np.ndarray,
    iterations: int = REFERENCE_ITERATIONS,
) -> float:
    """(1/n) sum_i [f_i(x1) - min_D f_i], exact for clients with a closed-form minimum.

    Other clients use centralized FW, whose best value approaches the
    minimum from above, so their contribution can come out low.
    """
    total = 0.0
    for i, client in enumerate(problem.clients):
        minimum = client.minimum_over(feasible_set)
        if minimum is None:
            logger.debug("client %s: no closed-form minimum, running %s FW iterations", i, iterations)
            _, minimum = centralized_frank_wolfe(Problem([client]), feasible_set, iterations=iterations)
        total += client.value(x1) - minimum
    return total / problem.n


def estimate_gradient_variance(
    oracles: Sequence[StochasticOracle],
    x: np.ndarray,
    draws: int = 100,
    start_round: int = 1,
) -> float:
    """Largest per-client mean of ||stochastic grad - grad||^2 at x."""
    worst = 0.0
    for oracle in oracles:
        exact = oracle.client.grad(x)
        acc = 0.0
        for r in range(start_round, start_round + draws):
            diff = oracle.grad(x, r) - exact
            acc += float(np.dot(diff, diff))
        worst = max(worst, acc / draws)
    return worst


def log_log_slope(ts: Sequence[float], values: Sequence[float]) -> float:
    t = np.asarray(ts, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    keep = (v > 0) & (t > 0)
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)
    return float(slope)


def evaluate_round(
    state: FederationState,
    problem: Problem,
    ctx: MetricsContext,
    t: int,
    eta: float,
    lam: float,
    rho: float | None,
    active_count: int,
    step_gap: float,
    recursion_slack: float | None = None,
) -> RoundMetrics:
    """Metrics of the state produced by round t (that is X^{t+1}) under lambda_t."""
    x_bar = state.x_bar
    feasible = ctx.global_set.contains(x_bar)
    objective = problem.value(x_bar)
    gap = fw_gap(problem, ctx.global_set, x_bar, check=False)
    s_gap = surrogate_gap(state, problem, lam)
    dist = consensus_distance(state)
    s_value = problem.client_average(state.models()) + 0.5 * lam * dist * dist

    residual = surrogate_residual = None
    if ctx.f_star is not None:
        residual = objective - ctx.f_star
        surrogate_residual = s_value - ctx.f_star

    t1 = obj_bound = cons_bound = None
    c = ctx.constants
    if ctx.convex_bounds:
        dual = ctx.dual_norm if ctx.dual_norm is not None else 0.0
        t1 = theorem1_surrogate_bound(c, t)
        obj_bound = theorem1_objective_bound(c, t + 1, dual)
        cons_bound = consensus_bound(c, t, dual)

    return RoundMetrics(
        t=t,
        objective=objective,
        fw_gap=gap,
        surrogate_gap=s_gap,
        step_gap=step_gap,
        consensus_distance=dist,
        surrogate_value=s_value,
        residual=residual,
        surrogate_residual=surrogate_residual,
        theorem1_bound=t1,
        objective_bound=obj_bound,
        consensus_bound=cons_bound,
        eta=eta,
        lam=lam,
        rho=rho,
        active_count=active_count,
        feasible=feasible,
        recursion_slack=recursion_slack,
    )
