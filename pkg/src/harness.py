"""Experiment runner: wires a RunConfig into a Federation and writes the run artifacts."""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import RunConfig, build_problem, build_sets, initial_point
from .engine import FEDFW, FEDFW_STO, Federation, run_naive_baseline
from .feasible_sets import FeasibleSet, is_extreme_point
from .metrics import (
    GAP_TOL,
    BoundConstants,
    MetricsContext,
    RoundMetrics,
    estimate_gradient_variance,
    estimate_init_gap,
    gradient_bound_G,
    reference_optimum,
    theorem2_gap_bound,
    theorem3_constants,
    theorem3_objective_bound,
)
from .model_file import save_model
from .objectives import MclrClient, Problem, StochasticOracle, finite_difference_grad, smoothness_bound
from .scheduler import CONVEX, STOCHASTIC
from .store import Store
from .utils import config_hash, env_int
from .vectors import STREAM_SAMPLE, RngStream
from .writer import MetricsWriter, metrics_row, write_baseline, write_json, write_report, write_summary_csv

logger = logging.getLogger(__name__)

THEOREM_TOL = 1e-9


@dataclass
class Prepared:
    problem: Problem
    global_set: FeasibleSet
    client_sets: list[FeasibleSet] | None
    x0: np.ndarray | None
    ctx: MetricsContext
    x_star: np.ndarray
    analytic_optimum: bool


@dataclass
class RunResult:
    out_dir: str
    history: list[RoundMetrics]
    final_x: np.ndarray
    summary: dict[str, Any]
    baseline: np.ndarray | None = None
    membership_residual: float = 0.0
    recursion_slacks: list[float] = field(default_factory=list)


def default_out_dir(cfg: RunConfig) -> str:
    root = os.getenv("FEDFW_RUNS_DIR", "runs")
    return os.path.join(root, f"{cfg.name or 'run'}-{config_hash(cfg.to_dict())}")


def prepare(cfg: RunConfig) -> Prepared:
    problem = build_problem(cfg)
    global_set, client_sets = build_sets(cfg, problem.dim, problem.n)
    x0 = initial_point(cfg, problem.dim)
    x1 = global_set.canonical_vertex() if x0 is None else x0

    L = smoothness_bound(problem)
    x_star, f_star = reference_optimum(problem, global_set, cfg.bounds.reference_iterations)
    regime = cfg.schedule.regime
    init_gap = None
    if cfg.schedule_obj().is_fixed_step:
        init_gap = estimate_init_gap(problem, global_set, x1, cfg.bounds.init_gap_iterations)
    sigma = None
    if cfg.algorithm == FEDFW_STO:
        oracles = [StochasticOracle(c, cfg.batch_size or 1, cfg.seed, i) for i, c in enumerate(problem.clients)]
        sigma = math.sqrt(estimate_gradient_variance(oracles, x1, draws=100, start_round=1))

    constants = BoundConstants(
        smoothness=L,
        n=problem.n,
        diameter=global_set.diameter(),
        lambda0=cfg.schedule.lambda0,
        gradient_bound=gradient_bound_G(problem, global_set, L, x_hat=x_star),
        init_gap=init_gap,
        sigma=sigma,
    )
    if cfg.bounds.dual_norm is None and regime == CONVEX:
        logger.warning("dual norm unknown; consensus bound is reported with ||Y*|| = 0 and is not asserted")
    ctx = MetricsContext(
        global_set=global_set,
        constants=constants,
        f_star=f_star,
        convex_bounds=regime == CONVEX and problem.is_convex and cfg.algorithm == FEDFW,
        dual_norm=cfg.bounds.dual_norm,
    )
    return Prepared(problem, global_set, client_sets, x0, ctx, x_star, problem.optimum is not None)


def _records(cfg: RunConfig, t: int) -> bool:
    return t == 1 or t == cfg.rounds or t % cfg.metrics_every == 0


def execute(cfg: RunConfig, out_dir: str, prepared: Prepared | None = None, verify: bool | None = None) -> RunResult:
    """Run every round of one config and write its artifacts to out_dir."""
    p = prepared or prepare(cfg)
    verify = cfg.verify if verify is None else verify
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "resolved_config.json"), cfg.to_dict())
    logger.info(
        "Run start: %s algorithm=%s regime=%s rounds=%s n=%s dim=%s out=%s",
        cfg.name or "run",
        cfg.algorithm,
        cfg.schedule.regime,
        cfg.rounds,
        p.problem.n,
        p.problem.dim,
        out_dir,
    )

    history: list[RoundMetrics] = []
    membership_residual = 0.0
    recursion_slacks: list[float] = []
    with Federation(
        p.problem,
        cfg.schedule_obj(),
        cfg.algorithm,
        p.ctx,
        participation=cfg.participation,
        seed=cfg.seed,
        batch_size=cfg.batch_size,
        workers=cfg.workers,
        verify=verify,
        x0=p.x0,
        client_sets=p.client_sets,
    ) as fed, MetricsWriter(out_dir) as writer:
        for t in range(1, cfg.rounds + 1):
            started = time.perf_counter()
            m = fed.step(record=_records(cfg, t))
            if m is None:
                continue
            writer.write(m, (time.perf_counter() - started) * 1000.0)
            history.append(m)
            if verify:
                for slot in fed.state.clients:
                    membership_residual = max(membership_residual, slot.feasible_set.residual(slot.x))
                if m.recursion_slack is not None:
                    recursion_slacks.append(m.recursion_slack)
            if m.t % cfg.log_every == 0:
                logger.debug(
                    "t=%s F=%.6g fw_gap=%.3e surrogate_gap=%.3e dist=%.3e active=%s",
                    m.t,
                    m.objective,
                    m.fw_gap,
                    m.surrogate_gap,
                    m.consensus_distance,
                    m.active_count,
                )
        final_x = fed.state.x_bar.copy()

    save_model(os.path.join(out_dir, "final_model.bin"), final_x)
    baseline = None
    if cfg.baseline:
        baseline = run_naive_baseline(p.problem, p.global_set, cfg.rounds)
        write_baseline(os.path.join(out_dir, "baseline.csv"), baseline)

    summary = build_summary(cfg, p, history, final_x, baseline)
    write_json(os.path.join(out_dir, "summary.json"), summary)
    last = history[-1]
    logger.info(
        "Run done: F=%.9g residual=%s fw_gap=%.3e dist=%.3e", last.objective, last.residual, last.fw_gap, last.consensus_distance
    )
    return RunResult(out_dir, history, final_x, summary, baseline, membership_residual, recursion_slacks)


def build_summary(
    cfg: RunConfig, p: Prepared, history: list[RoundMetrics], final_x: np.ndarray, baseline: np.ndarray | None
) -> dict[str, Any]:
    last = history[-1]
    c = p.ctx.constants
    summary: dict[str, Any] = {
        "config_hash": config_hash(cfg.to_dict()),
        "rounds": len(history),
        "final_objective": last.objective,
        "final_residual": last.residual,
        "final_fw_gap": last.fw_gap,
        "final_surrogate_gap": last.surrogate_gap,
        "final_consensus_distance": last.consensus_distance,
        "final_feasible": last.feasible,
        "f_star": p.ctx.f_star,
        "f_star_analytic": p.analytic_optimum,
        "constants": c.to_dict(),
        "final_model": final_x.tolist(),
    }
    if p.ctx.convex_bounds:
        violations = [
            m.t
            for m in history
            if m.surrogate_residual is not None and m.surrogate_residual > m.theorem1_bound + THEOREM_TOL
        ]
        summary["theorem1_violations"] = len(violations)
    if c.init_gap is not None and cfg.metrics_every == 1:
        mean_gap = float(np.mean([m.step_gap for m in history]))
        summary["mean_step_gap"] = mean_gap
        summary["theorem2_bound"] = theorem2_gap_bound(c, cfg.rounds)
    if cfg.schedule.regime == STOCHASTIC:
        # the estimator starts at zero, so the initial mismatch is the full scaled gradient
        x1 = p.global_set.canonical_vertex() if p.x0 is None else p.x0
        mismatch = sum(float(np.dot(g, g)) for g in (cl.grad(x1) / p.problem.n for cl in p.problem.clients))
        C, Q = theorem3_constants(c, mismatch)
        dual = cfg.bounds.dual_norm or 0.0
        summary["theorem3"] = {"C": C, "Q": Q, "final_bound": theorem3_objective_bound(c, len(history), C, dual)}
    if isinstance(p.problem.clients[0], MclrClient):
        summary["accuracy"] = [cl.accuracy(final_x) for cl in p.problem.clients]
    if baseline is not None:
        summary["baseline_max_abs"] = float(np.max(np.abs(baseline)))
    return summary


def run(cfg: RunConfig, out_dir: str | None = None, store: Store | None = None, preset: str | None = None) -> RunResult:
    out_dir = out_dir or cfg.output_dir or default_out_dir(cfg)
    run_id = store.start_run(config_hash(cfg.to_dict()), out_dir, preset) if store else None
    try:
        result = execute(cfg, out_dir)
    except Exception as exc:  # pylint: disable=broad-except
        if store and run_id is not None:
            store.finish_run(run_id, "failed", error=str(exc))
        raise
    if store and run_id is not None:
        last = result.history[-1]
        store.finish_run(run_id, "ok", last.objective, last.residual)
    return result


def grid_cells(cfg: RunConfig, grid: dict[str, list]) -> list[dict[str, Any]]:
    lambdas = grid.get("lambda0") or cfg.sweep.lambda0 or [cfg.schedule.lambda0]
    ps = grid.get("participation") or cfg.sweep.participation or [cfg.participation]
    seeds = grid.get("seed") or cfg.sweep.seed or [cfg.seed]
    return [
        {"lambda0": float(lam), "participation": float(pp), "seed": int(s)}
        for lam, pp, s in itertools.product(lambdas, ps, seeds)
    ]


def sweep(
    cfg: RunConfig,
    grid: dict[str, list] | None = None,
    out_root: str | None = None,
    store: Store | None = None,
    preset: str | None = None,
) -> tuple[list[dict[str, Any]], int]:
    """One run directory per grid cell plus summary.csv. Returns (rows, failed cell count)."""
    out_root = out_root or cfg.output_dir or default_out_dir(cfg)
    os.makedirs(out_root, exist_ok=True)
    rows: list[dict[str, Any]] = []
    failed = 0
    cells = grid_cells(cfg, grid or {})
    for k, cell in enumerate(cells):
        out_dir = os.path.join(out_root, f"cell_{k:03d}")
        row: dict[str, Any] = {"cell": k, **cell, "out_dir": out_dir, "rounds": cfg.rounds}
        try:
            child = cfg.with_overrides(**cell, output_dir=out_dir, sweep=type(cfg.sweep)())
            result = run(child, out_dir, store, preset)
            last = result.history[-1]
            row.update(
                status="ok",
                final_objective=last.objective,
                final_residual=last.residual,
                final_fw_gap=last.fw_gap,
                final_surrogate_gap=last.surrogate_gap,
                round1_surrogate_gap=result.history[0].surrogate_gap,
                final_consensus_distance=last.consensus_distance,
            )
        except Exception as exc:  # pylint: disable=broad-except
            failed += 1
            logger.exception("Sweep cell %s failed: %s", k, exc)
            row.update(status="failed", error=str(exc))
        rows.append(row)
        logger.info("Sweep cell %s/%s %s -> %s", k + 1, len(cells), cell, row["status"])
    write_summary_csv(os.path.join(out_root, "summary.csv"), rows)
    return rows, failed


def _check(name: str, passed: bool, worst: float | None, detail: str = "") -> dict[str, Any]:
    return {"check": name, "passed": bool(passed), "worst_slack": worst, "detail": detail}


def check_lmo_optimality(
    feasible_set: FeasibleSet, seed: int = 0, directions: int = 1000, points: int = 10_000
) -> tuple[float, int]:
    """Worst (min_u <g,u> - <g,lmo(g)>) over random directions, and the count of non-extreme outputs."""
    rng = RngStream(seed, 0, 0, STREAM_SAMPLE).generator()
    G = rng.standard_normal((directions, feasible_set.dim))
    U = feasible_set.sample(rng, points)
    inner = G @ U.T
    worst = math.inf
    not_extreme = 0
    for g, row in zip(G, inner):
        s = feasible_set.lmo(g)
        worst = min(worst, float(np.min(row) - np.dot(g, s)))
        if not is_extreme_point(feasible_set, s):
            not_extreme += 1
    return worst, not_extreme


def check_gradients(problem: Problem, feasible_set: FeasibleSet, seed: int = 0, clients: int = 3) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    rng = RngStream(seed, 0, 1, STREAM_SAMPLE).generator()
    points = feasible_set.sample(rng, 2)
    worst = 0.0
    for client in problem.clients[:clients]:
        for x in points:
            g = client.grad(x)
            fd = finite_difference_grad(client.value, x)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))))
    return worst


def verify(cfg: RunConfig, out_dir: str | None = None) -> tuple[list[dict[str, Any]], bool]:
    cfg = cfg.with_overrides(metrics_every=1)
    out_dir = out_dir or cfg.output_dir or default_out_dir(cfg)
    p = prepare(cfg)
    checks: list[dict[str, Any]] = []

    sets = [p.global_set] + list(p.client_sets or [])
    worst_opt, worst_extreme = math.inf, 0
    for k, s in enumerate(sets):
        opt, not_extreme = check_lmo_optimality(s, seed=cfg.seed + k)
        worst_opt = min(worst_opt, opt)
        worst_extreme += not_extreme
    checks.append(_check("lmo_optimality", worst_opt >= -GAP_TOL, worst_opt))
    checks.append(_check("lmo_extreme_point", worst_extreme == 0, float(worst_extreme)))

    fd_err = check_gradients(p.problem, p.global_set, cfg.seed)
    checks.append(_check("gradient_finite_difference", fd_err <= 1e-4, fd_err))

    result = execute(cfg, os.path.join(out_dir, "run"), prepared=p, verify=True)
    history = result.history
    checks.append(_check("membership_closure", result.membership_residual <= 1e-9, result.membership_residual))

    if result.recursion_slacks:
        worst = max(result.recursion_slacks)
        checks.append(_check("server_recursion_vs_mean", worst <= 1e-9, worst))
    else:
        checks.append(_check("server_recursion_vs_mean", True, None, "skipped: partial participation"))

    feasible_gaps = [m.fw_gap for m in history if m.feasible]
    worst_fw = min(feasible_gaps) if feasible_gaps else None
    checks.append(_check("fw_gap_nonnegative", worst_fw is None or worst_fw >= -GAP_TOL, worst_fw))
    worst_sg = min(min(m.surrogate_gap, m.step_gap) for m in history)
    checks.append(_check("surrogate_gap_nonnegative", worst_sg >= -GAP_TOL, worst_sg))
    lam_steps = [b.lam - a.lam for a, b in zip(history, history[1:])]
    worst_lam = min(lam_steps) if lam_steps else 0.0
    checks.append(_check("lambda_monotone", worst_lam >= 0.0, worst_lam))

    if p.ctx.convex_bounds and p.analytic_optimum:
        slack = min(m.theorem1_bound - m.surrogate_residual for m in history)
        checks.append(_check("theorem1_inequality", slack >= -THEOREM_TOL, slack))
    if p.ctx.constants.init_gap is not None:
        slack = result.summary["theorem2_bound"] - result.summary["mean_step_gap"]
        checks.append(_check("theorem2_inequality", slack >= 0.0, slack))

    again = execute(cfg, os.path.join(out_dir, "rerun"), prepared=p, verify=False)
    same = [metrics_row(a) for a in history] == [metrics_row(b) for b in again.history]
    checks.append(_check("determinism", same, 0.0 if same else None))

    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, "verify_report.csv"), checks)
    ok = all(c["passed"] for c in checks)
    for c in checks:
        level = logging.INFO if c["passed"] else logging.ERROR
        logger.log(level, "verify %-28s %s worst=%s %s", c["check"], "PASS" if c["passed"] else "FAIL", c["worst_slack"], c["detail"])
    return checks, ok


def resolve_workers(cli_workers: int | None, cfg: RunConfig) -> int:
    if cli_workers is not None:
        return cli_workers
    if cfg.workers != 1:
        return cfg.workers
    return env_int("FEDFW_WORKERS", 1)
