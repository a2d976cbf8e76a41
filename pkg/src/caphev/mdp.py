"""Desk-scale average-cost MDP for checking the greedy torque split against dynamic programming.

The state is the shaft-speed pair and the i.i.d. torque demand; transitions of
the speed pair do not depend on the split. Under that structure the split
that minimises the one-stage cost at every stage is average-cost optimal, and
relative value iteration must reproduce its long-run average cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .powertrain import (DEFAULT_POWERTRAIN, Powertrain, PowertrainState, TorqueSplit,
                         pareto_split, split_candidates, stage_cost)


@dataclass(frozen=True)
class SplitMDP:
    states: tuple[PowertrainState, ...]
    demands: np.ndarray
    demand_probs: np.ndarray
    transition: np.ndarray  # speed-pair transition matrix
    alpha: float = 0.5
    powertrain: Powertrain = DEFAULT_POWERTRAIN

    @property
    def n_aug(self) -> int:
        return len(self.states) * len(self.demands)

    def aug_index(self, i: int, w: int) -> int:
        return i * len(self.demands) + w

    def actions(self, i: int, w: int) -> list[TorqueSplit]:
        state, d = self.states[i], float(self.demands[w])
        if d <= 0.0:
            return [pareto_split(state, d, self.alpha, self.powertrain)]
        return [TorqueSplit(float(e), d - float(e))
                for e in split_candidates(state, d, 1.0, self.powertrain)]

    def action_costs(self) -> list[np.ndarray]:
        out = []
        for i, state in enumerate(self.states):
            for w in range(len(self.demands)):
                out.append(np.array([stage_cost(state, a, self.alpha, self.powertrain)
                                     for a in self.actions(i, w)]))
        return out

    def aug_transition(self) -> np.ndarray:
        return np.kron(self.transition, np.tile(self.demand_probs, (len(self.demands), 1)))


def synthetic_mdp(seed: int = 0, alpha: float = 0.5) -> SplitMDP:
    """5 x 5 speed grid, five demand levels, random dense transition matrix."""
    rng = np.random.default_rng(seed)
    eng = (0.0, 800.0, 1400.0, 2000.0, 2600.0)
    mot = (500.0, 1000.0, 1500.0, 2000.0, 2500.0)
    states = tuple(PowertrainState(e, m) for e in eng for m in mot)
    P = rng.uniform(0.1, 1.0, (len(states), len(states)))
    P /= P.sum(axis=1, keepdims=True)
    demands = np.array([-80.0, 30.0, 90.0, 160.0, 240.0])
    q = rng.uniform(0.5, 1.5, len(demands))
    return SplitMDP(states, demands, q / q.sum(), P, alpha)


def relative_value_iteration(costs: list[np.ndarray], P, ref: int = 0,
                             tol: float = 1e-13, max_iter: int = 100_000):
    """Average-cost optimum ``(J, h, policy)`` by relative value iteration.

    ``costs[s]`` holds the one-stage cost of every admissible action in state
    ``s``. ``P`` is either one shared ``(S, S)`` matrix or a list whose entry
    ``s`` is an ``(A_s, S)`` matrix of per-action transition rows.
    """
    n = len(costs)
    if isinstance(P, np.ndarray) and P.ndim == 2:
        rows = [np.broadcast_to(P[s], (len(costs[s]), n)) for s in range(n)]
    else:
        rows = list(P)
    h = np.zeros(n)
    for _ in range(max_iter):
        Th = np.array([np.min(costs[s] + rows[s] @ h) for s in range(n)])
        J = Th[ref]
        h_new = Th - J
        if np.max(np.abs(h_new - h)) < tol:
            h = h_new
            break
        h = h_new
    else:
        raise RuntimeError("relative value iteration did not converge")
    policy = np.array([int(np.argmin(costs[s] + rows[s] @ h)) for s in range(n)])
    return float(J), h, policy


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, b, rcond=None)
    return mu


def greedy_average_cost(mdp: SplitMDP) -> float:
    """Exact long-run average cost of the per-stage Pareto split."""
    mu = stationary_distribution(mdp.aug_transition())
    k = np.empty(mdp.n_aug)
    for i, state in enumerate(mdp.states):
        for w, d in enumerate(mdp.demands):
            split = pareto_split(state, float(d), mdp.alpha, mdp.powertrain)
            k[mdp.aug_index(i, w)] = stage_cost(state, split, mdp.alpha, mdp.powertrain)
    return float(mu @ k)


def simulate_chain(mdp: SplitMDP, n: int, seed: int = 0) -> list[tuple[PowertrainState, float]]:
    """Sample a demand sequence ``[(state, T_driver), ...]`` from the chain."""
    rng = np.random.default_rng(seed)
    i = 0
    out = []
    for _ in range(n):
        w = rng.choice(len(mdp.demands), p=mdp.demand_probs)
        out.append((mdp.states[i], float(mdp.demands[w])))
        i = rng.choice(len(mdp.states), p=mdp.transition[i])
    return out
