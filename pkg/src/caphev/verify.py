"""Oracle suites: each compares an implementation against an independent route."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .mdp import greedy_average_cost, relative_value_iteration, synthetic_mdp
from .ocp import (BoundaryConditions, qp_oracle_extrapolated, solve_fixed_terminal_speed,
                  solve_free_terminal_speed)
from .powertrain import (DEFAULT_POWERTRAIN, Powertrain, PowertrainError, PowertrainState,
                         cached_table, engine_efficiency, motor_efficiency, online_policy,
                         pareto_split)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.elapsed:.2f} s)"


def random_boundary_problems(n: int, seed: int = 0) -> list[BoundaryConditions]:
    """Mixed free/fixed terminal speed instances of modest size."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        T = rng.uniform(2.0, 30.0)
        v0 = rng.uniform(0.0, 25.0)
        dist = rng.uniform(0.2, 1.5) * max(v0, 2.0) * T
        vf = None if k % 2 == 0 else float(rng.uniform(0.0, 25.0))
        t0 = rng.uniform(0.0, 100.0)
        p0 = rng.uniform(0.0, 500.0)
        out.append(BoundaryConditions(t0, t0 + T, p0, p0 + dist, v0, vf))
    return out


def solver_suite(n: int = 200, seed: int = 0, rtol: float = 1e-6, n_steps: int = 400) -> CheckResult:
    """Closed-form cost against the discretized QP, plus transversality on free-speed cases."""
    start = time.perf_counter()
    worst = 0.0
    bad_u = 0
    for bc in random_boundary_problems(n, seed):
        sol = solve_free_terminal_speed(bc) if bc.vf is None else solve_fixed_terminal_speed(bc)
        ref = qp_oracle_extrapolated(bc, n_steps)
        worst = max(worst, abs(sol.cost - ref) / max(abs(ref), 1e-12))
        if bc.vf is None and sol.segment.end_state()[2] != 0.0:
            bad_u += 1
    elapsed = time.perf_counter() - start
    ok = worst <= rtol and bad_u == 0
    return CheckResult("solver vs QP oracle", ok,
                       f"{n} instances, worst relative cost error {worst:.2e}, "
                       f"{bad_u} free-speed cases with u(tf) != 0", elapsed)


def brute_force_split_objective(state: PowertrainState, demand: float, alpha: float,
                                pt: Powertrain = DEFAULT_POWERTRAIN) -> float:
    """Best weighted efficiency over the 1 Nm engine-torque grid, by scalar enumeration."""
    lim = pt.limits
    hi = min(demand, lim.engine_torque_max) if state.engine_on else 0.0
    lo = max(0.0, demand - lim.motor_torque_max)
    if lo > hi:
        raise PowertrainError("infeasible demand")
    cands = {lo, hi}
    cands.update(float(k) for k in range(math.ceil(lo), math.floor(hi) + 1))
    best = -math.inf
    for te in cands:
        w = (1.0 - alpha) * motor_efficiency(state.motor_speed, demand - te, pt.motor_map)
        if te > 0.0 and state.engine_on:
            w += alpha * engine_efficiency(state.engine_speed, te, pt.engine_map)
        best = max(best, w)
    return best


def split_objective(state: PowertrainState, engine: float, motor: float, alpha: float,
                    pt: Powertrain = DEFAULT_POWERTRAIN) -> float:
    w = (1.0 - alpha) * motor_efficiency(state.motor_speed, motor, pt.motor_map)
    if engine > 0.0:
        w += alpha * engine_efficiency(state.engine_speed, engine, pt.engine_map)
    return w


def random_split_queries(n: int, seed: int = 0, pt: Powertrain = DEFAULT_POWERTRAIN):
    """Feasible positive-demand queries inside the default table envelope."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        nm = float(rng.uniform(0.0, 2250.0))
        on = nm >= pt.limits.engine_idle and rng.random() < 0.7
        state = PowertrainState(nm if on else 0.0, nm)
        demand = float(rng.uniform(0.5, 550.0))
        hi = min(demand, pt.limits.engine_torque_max) if on else 0.0
        if max(0.0, demand - pt.limits.motor_torque_max) > hi:
            continue
        out.append((state, demand, float(rng.uniform(0.0, 1.0))))
    return out


def pareto_suite(n: int = 1000, seed: int = 0, atol: float = 1e-12,
                 table_rtol: float = 0.02) -> CheckResult:
    start = time.perf_counter()
    table = cached_table()
    worst_split = 0.0
    worst_table = 0.0
    for state, demand, alpha in random_split_queries(n, seed):
        s = pareto_split(state, demand, alpha)
        direct = split_objective(state, s.engine, s.motor, alpha)
        worst_split = max(worst_split, abs(direct - brute_force_split_objective(state, demand, alpha)))
        o = online_policy(table, state, demand, alpha)
        online = split_objective(state, o.engine, o.motor, alpha)
        if direct > 0.0:
            worst_table = max(worst_table, (direct - online) / direct)
    elapsed = time.perf_counter() - start
    ok = worst_split <= atol and worst_table <= table_rtol
    return CheckResult("Pareto split vs brute force", ok,
                       f"{n} queries, split objective gap {worst_split:.1e}, "
                       f"worst table shortfall {100 * worst_table:.2f}%", elapsed)


def mdp_suite(seeds=(0, 1, 2), tol: float = 1e-9) -> CheckResult:
    """Greedy Pareto average cost against relative value iteration."""
    start = time.perf_counter()
    worst = 0.0
    for seed in seeds:
        mdp = synthetic_mdp(seed)
        j_dp, _, _ = relative_value_iteration(mdp.action_costs(), mdp.aug_transition())
        worst = max(worst, abs(greedy_average_cost(mdp) - j_dp))
    elapsed = time.perf_counter() - start
    return CheckResult("greedy vs value iteration", worst <= tol,
                       f"{len(seeds)} chains, worst |J_greedy - J_dp| {worst:.1e}", elapsed)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [solver_suite(seed=seed), pareto_suite(seed=seed), mdp_suite((seed, seed + 1, seed + 2))]
