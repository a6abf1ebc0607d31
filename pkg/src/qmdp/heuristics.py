"""Feasible policies for the quantile problem.

Two constructions are provided.  The mean-value policy solves one MDP built from
probability-weighted parameters.  The scenario-selection heuristic picks a set
of scenarios that covers probability alpha using the per-scenario lower bounds,
then solves a rectangular robust MDP over that set: at every state and action
the worst selected scenario is charged independently, which can only overstate
the coupled worst case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp_core import DEFAULT_TOL, Policy, UncertainMdp, greedy_actions, solve_mdp, stopping_threshold
from .preprocess import BoundsCache
from .quantile import var_alpha, var_of_policy

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class ScenarioSelection:
    z: tuple[int, ...]
    selected_prob: float

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(s for s, zs in enumerate(self.z) if zs)


@dataclass(frozen=True)
class RobustIteration:
    policy: Policy
    values: np.ndarray
    sigma: np.ndarray  # worst-case Q-values (H, A) at the last iterate
    steps: list[float]  # sup-norm step of every iteration

    @property
    def iterations(self) -> int:
        return len(self.steps)


def mean_value_policy(mdp: UncertainMdp, tol: float = DEFAULT_TOL) -> Policy:
    """Optimal deterministic policy of the MDP with probability-averaged costs and transitions."""
    p = mdp.probs
    cost = np.tensordot(p, mdp.cost, axes=1)
    trans = np.tensordot(p, mdp.trans, axes=1)
    sums = trans.sum(axis=2, keepdims=True)
    if np.max(np.abs(sums - 1.0)) > 1e-9:
        raise ValueError("averaged transition rows are not stochastic")
    trans = trans / sums
    _, acts = solve_mdp(cost, trans, mdp.gamma, "min", tol)
    return Policy.deterministic(acts, mdp.n_actions)


def select_scenarios(b_under, probs, alpha: float) -> ScenarioSelection:
    """Pick scenarios with ``b_under[s] <= VaR_alpha(b_under)`` covering probability alpha,
    each of which is needed to keep the cover at alpha.

    The ordered prefix that defines the quantile is taken first; members are then
    dropped from the expensive end while the cover stays at or above alpha.
    """
    probs = np.asarray(probs, dtype=float)
    res = var_alpha(b_under, probs, alpha)
    chosen = list(res.order[: res.cut_index])
    total = float(probs[chosen].sum())
    for s in reversed(list(chosen)):
        if total - probs[s] >= alpha - 1e-12:
            chosen.remove(s)
            total -= probs[s]
    z = [0] * len(probs)
    for s in chosen:
        z[s] = 1
    return ScenarioSelection(tuple(z), total)


def robust_value_iteration(mdp: UncertainMdp, z, eps: float = DEFAULT_EPS) -> RobustIteration:
    """Iterate ``v(i) <- min_a max_{s in S(z)} { c_i^s(a) + gamma P_i^s(a) v }``.

    Starts from each state's largest selected immediate cost divided by
    ``1 - gamma`` (1 where that is zero) and stops once the sup-norm step is
    below ``(1 - gamma) eps / gamma``.  The returned policy is greedy (value
    minimizing, smallest index on ties) with respect to the last worst-case
    Q-values.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    sel = [s for s, zs in enumerate(z) if zs]
    if not sel:
        raise ValueError("the scenario selection is empty")
    cost = mdp.cost[sel]
    trans = mdp.trans[sel]
    gamma = mdp.gamma
    start = cost.max(axis=(0, 2)) / (1.0 - gamma)
    v = np.where(start > 0, start, 1.0)
    thr = stopping_threshold(eps, gamma)
    steps = []
    while True:
        sigma = (cost + gamma * (trans @ v)).max(axis=0)
        v_new = sigma.min(axis=1)
        step = float(np.max(np.abs(v_new - v)))
        steps.append(step)
        v = v_new
        if step < thr:
            break
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("robust value iteration diverged")
    acts = greedy_actions(sigma, "min")
    return RobustIteration(Policy.deterministic(acts, mdp.n_actions), v, sigma, steps)


def robust_policy_selection(mdp: UncertainMdp, z, eps: float = DEFAULT_EPS) -> tuple[Policy, np.ndarray]:
    res = robust_value_iteration(mdp, z, eps)
    return res.policy, res.values


def robust_operator(mdp: UncertainMdp, z, v: np.ndarray) -> np.ndarray:
    sel = [s for s, zs in enumerate(z) if zs]
    sigma = (mdp.cost[sel] + mdp.gamma * (mdp.trans[sel] @ v)).max(axis=0)
    return sigma.min(axis=1)


def _local_search(mdp, alpha, sel, policy, value, eps, tol):
    probs = mdp.probs
    improved = True
    while improved:
        improved = False
        z = list(sel.z)
        for out in [s for s in range(len(z)) if z[s]]:
            for inn in [s for s in range(len(z)) if not z[s]]:
                cand = list(z)
                cand[out], cand[inn] = 0, 1
                total = float(probs[np.array(cand, dtype=bool)].sum())
                if total < alpha - 1e-12:
                    continue
                pol, _ = robust_policy_selection(mdp, cand, eps)
                val = var_of_policy(mdp, pol, alpha, tol).value
                if val < value - 1e-9:
                    sel, policy, value = ScenarioSelection(tuple(cand), total), pol, val
                    improved = True
                    break
            if improved:
                break
    return policy, value, sel


def initial_solution(mdp: UncertainMdp, cache: BoundsCache, alpha: float, eps: float = DEFAULT_EPS,
                     tol: float = DEFAULT_TOL, local_search: bool = False):
    """Scenario selection followed by robust policy selection.

    Returns ``(policy, value, selection)`` where ``value`` is the true VaR of the
    policy over all scenarios.  With ``local_search`` the selection is improved
    by single swaps while the VaR decreases.
    """
    sel = select_scenarios(cache.b_under, mdp.probs, alpha)
    policy, _ = robust_policy_selection(mdp, sel.z, eps)
    value = var_of_policy(mdp, policy, alpha, tol).value
    if local_search:
        policy, value, sel = _local_search(mdp, alpha, sel, policy, value, eps, tol)
    return policy, value, sel
