"""Exact quantile minimization over stationary deterministic policies.

The search assigns one action per state, depth first.  At a node, each scenario
is relaxed to the best completion it could have on its own (free states choose
their own cost-minimizing action), which bounds every completion's expected
cost from below; by monotonicity of the quantile the alpha-quantile of these
per-scenario bounds bounds the node.
"""
from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .heuristics import initial_solution, mean_value_policy
from .mdp_core import DEFAULT_TOL, Policy, UncertainMdp, policy_iteration
from .preprocess import BoundsCache, Fix, compute_bounds
from .quantile import var_alpha, var_of_policy

PRUNE_TOL = 1e-9
MAX_ENUMERATION = 10**6


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass
class SolveResult:
    policy: Policy | None
    value: float
    selected: tuple[int, ...]
    nodes: int
    gap: float
    status: str  # optimal | time_limit | infeasible
    lower_bound: float = -math.inf
    wall_time: float = 0.0
    costs: np.ndarray | None = field(default=None, repr=False)


def is_monotone(actions) -> bool:
    """Action index nonincreasing in the state index."""
    return all(a >= b for a, b in zip(actions, actions[1:]))


# ---------------------------------------------------------------- brute force

def _enumerate_policies(n_states: int, n_actions: int, monotone: bool) -> np.ndarray:
    if monotone:
        # nonincreasing sequences, produced in lexicographic order
        pols = [p for p in itertools.product(range(n_actions), repeat=n_states) if is_monotone(p)]
        return np.array(pols, dtype=int).reshape(-1, n_states)
    grids = np.indices((n_actions,) * n_states).reshape(n_states, -1).T
    return grids


def _batched_scenario_costs(mdp: UncertainMdp, pols: np.ndarray) -> np.ndarray:
    """Expected discounted cost of every policy (rows of ``pols``) in every scenario."""
    n = mdp.n_states
    rows = np.arange(n)
    c = mdp.cost[:, rows, pols]  # (S, N, H)
    p = mdp.trans[:, rows, pols]  # (S, N, H, H)
    lhs = np.eye(n) - mdp.gamma * p
    v = np.linalg.solve(lhs, c[..., None])[..., 0]
    return (v @ mdp.q).T  # (N, S)


def _quantiles(costs: np.ndarray, probs: np.ndarray, alpha: float) -> np.ndarray:
    """Row-wise VaR as the smallest attained value whose cumulative probability reaches alpha."""
    le = costs[:, None, :] <= costs[:, :, None]  # [n, k, t]: cost_t <= cost_k
    mass = le.astype(float) @ probs
    cand = np.where(mass >= alpha - 1e-12, costs, np.inf)
    return cand.min(axis=1)


def brute_force(mdp: UncertainMdp, alpha: float, monotone: bool = False,
                chunk: int = 4096) -> SolveResult:
    """Enumerate every deterministic (optionally monotone) policy and keep the lowest VaR.

    Ties go to the lexicographically smallest action vector.
    """
    t0 = time.perf_counter()
    total = mdp.n_actions ** mdp.n_states
    if total > MAX_ENUMERATION:
        raise SearchSpaceTooLarge(f"{total} policies exceed the enumeration limit {MAX_ENUMERATION}")
    pols = _enumerate_policies(mdp.n_states, mdp.n_actions, monotone)
    best_val, best_idx, best_costs = math.inf, -1, None
    for start in range(0, len(pols), chunk):
        block = pols[start:start + chunk]
        costs = _batched_scenario_costs(mdp, block)
        vals = _quantiles(costs, mdp.probs, alpha)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_idx, best_costs = float(vals[k]), start + k, costs[k]
    actions = pols[best_idx]
    selected = tuple(int(s) for s in np.flatnonzero(best_costs <= best_val))
    return SolveResult(Policy.deterministic(actions, mdp.n_actions), best_val, selected, len(pols), 0.0,
                       "optimal", best_val, time.perf_counter() - t0, best_costs)


def expected_value_policy(mdp: UncertainMdp, monotone: bool = False, chunk: int = 4096) -> Policy:
    """Deterministic policy minimizing the probability-weighted expected cost, by enumeration."""
    total = mdp.n_actions ** mdp.n_states
    if total > MAX_ENUMERATION:
        raise SearchSpaceTooLarge(f"{total} policies exceed the enumeration limit {MAX_ENUMERATION}")
    pols = _enumerate_policies(mdp.n_states, mdp.n_actions, monotone)
    best_val, best_idx = math.inf, -1
    for start in range(0, len(pols), chunk):
        vals = _batched_scenario_costs(mdp, pols[start:start + chunk]) @ mdp.probs
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_idx = float(vals[k]), start + k
    return Policy.deterministic(pols[best_idx], mdp.n_actions)


# ---------------------------------------------------------------- branch and bound

def _allowed_mask(partial: np.ndarray, n_actions: int, monotone: bool) -> np.ndarray:
    n = len(partial)
    mask = np.zeros((n, n_actions), dtype=bool)
    for i in range(n):
        if partial[i] >= 0:
            mask[i, partial[i]] = True
            continue
        lo, hi = 0, n_actions - 1
        if monotone:
            right = partial[i + 1:]
            left = partial[:i]
            if np.any(right >= 0):
                lo = int(right[right >= 0].max())
            if np.any(left >= 0):
                hi = int(left[left >= 0].min())
        mask[i, lo:hi + 1] = True
    return mask


def _relaxed_costs(mdp: UncertainMdp, mask: np.ndarray, warm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-scenario minimum expected cost over policies admitted by ``mask``."""
    lbs = np.empty(mdp.n_scenarios)
    acts = np.empty_like(warm)
    rows = np.arange(mdp.n_states)
    for s in range(mdp.n_scenarios):
        init = warm[s].copy()
        bad = ~mask[rows, init]
        if np.any(bad):
            init[bad] = mask[bad].argmax(axis=1)
        v, acts[s] = policy_iteration(mdp.cost[s], mdp.trans[s], mdp.gamma, "min", init, mask)
        lbs[s] = mdp.q @ v
    return lbs, acts


def _node_bound(lbs: np.ndarray, probs: np.ndarray, alpha: float, cache: BoundsCache) -> float:
    vals = lbs.copy()
    out = [s for s, f in enumerate(cache.z_fixed) if f is Fix.FORCED0]
    vals[out] = np.inf
    bound = var_alpha(vals, probs, alpha).value
    keep = [s for s, f in enumerate(cache.z_fixed) if f is Fix.FORCED1]
    if keep:
        bound = max(bound, float(lbs[keep].max()))
    return max(bound, cache.b_l)


def node_lower_bound(mdp: UncertainMdp, alpha: float, cache: BoundsCache, partial,
                     monotone: bool = False) -> float:
    """Lower bound on the VaR of every completion of ``partial`` (-1 marks a free state)."""
    partial = np.asarray(partial, dtype=int)
    mask = _allowed_mask(partial, mdp.n_actions, monotone)
    warm = np.tile(mask.argmax(axis=1), (mdp.n_scenarios, 1))
    lbs, _ = _relaxed_costs(mdp, mask, warm)
    return _node_bound(lbs, mdp.probs, alpha, cache)


def branching_order(cache: BoundsCache) -> list[int]:
    """States by decreasing value spread across scenarios; ties by state index."""
    spread = (cache.v_bar - cache.v_under).max(axis=1)
    return sorted(range(len(spread)), key=lambda i: (-spread[i], i))


def solve_exact(mdp: UncertainMdp, alpha: float, cache: BoundsCache | None = None, *,
                monotone: bool = False, time_limit: float | None = None, tol: float = PRUNE_TOL,
                incumbent: Policy | None = None, use_heuristics: bool = True,
                eval_tol: float = DEFAULT_TOL) -> SolveResult:
    """Depth-first branch and bound for the minimum-VaR deterministic policy.

    ``cache`` supplies bounds and any fixed scenario indicators; it is computed
    if omitted.  The incumbent starts from the better of the scenario-selection
    heuristic and the mean-value policy (only those that are monotone when
    ``monotone`` is set) and from ``incumbent`` if given.
    """
    t0 = time.perf_counter()
    if cache is None:
        cache = compute_bounds(mdp, alpha)
    if cache.n_scenarios != mdp.n_scenarios or cache.v_bar.shape[0] != mdp.n_states:
        raise ValueError("bounds cache does not match the instance dimensions")
    if abs(cache.alpha - alpha) > 1e-15:
        raise ValueError(f"bounds cache was computed for alpha={cache.alpha}, not {alpha}")
    n, m = mdp.n_states, mdp.n_actions

    best_val, best_pol, best_cover = math.inf, None, ()

    def offer(pol: Policy):
        nonlocal best_val, best_pol, best_cover
        if monotone and not is_monotone(pol.actions):
            return
        res = var_of_policy(mdp, pol, alpha, eval_tol)
        if res.value < best_val - tol:
            best_val, best_pol, best_cover = res.value, pol, res.satisfied

    candidates = []
    if incumbent is not None:
        candidates.append(incumbent)
    if use_heuristics:
        candidates.append(initial_solution(mdp, cache, alpha)[0])
        candidates.append(mean_value_policy(mdp))
    for pol in candidates:
        offer(pol)

    order = branching_order(cache)
    root = np.full(n, -1)
    mask = _allowed_mask(root, m, monotone)
    warm = np.tile(mask.argmax(axis=1), (mdp.n_scenarios, 1))
    lbs, acts = _relaxed_costs(mdp, mask, warm)
    root_lb = _node_bound(lbs, mdp.probs, alpha, cache)
    stack = [(root_lb, root, acts)]
    nodes = 0
    timed_out = False
    while stack:
        lb, partial, warm = stack.pop()
        if lb >= best_val - tol:
            continue
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            stack.append((lb, partial, warm))
            timed_out = True
            break
        nodes += 1
        depth = int(np.sum(partial >= 0))
        state = order[depth]
        mask = _allowed_mask(partial, m, monotone)
        children = []
        for a in np.flatnonzero(mask[state]):
            child = partial.copy()
            child[state] = a
            if depth + 1 == n:
                nodes += 1
                offer(Policy.deterministic(child, m))
                continue
            cmask = _allowed_mask(child, m, monotone)
            clbs, cacts = _relaxed_costs(mdp, cmask, warm)
            clb = _node_bound(clbs, mdp.probs, alpha, cache)
            if clb < best_val - tol:
                children.append((clb, int(a), child, cacts))
        # most promising child on top of the stack
        children.sort(key=lambda c: (c[0], c[1]), reverse=True)
        stack.extend((c[0], c[2], c[3]) for c in children)

    elapsed = time.perf_counter() - t0
    if best_pol is None:
        status = "time_limit" if timed_out else "infeasible"
        return SolveResult(None, math.inf, (), nodes, math.inf, status, root_lb, elapsed)
    if timed_out:
        open_lb = min(entry[0] for entry in stack)
        lower = min(open_lb, best_val)
        gap = (best_val - lower) / abs(best_val) if best_val != 0 else 0.0
        return SolveResult(best_pol, best_val, best_cover, nodes, gap, "time_limit", lower, elapsed)
    return SolveResult(best_pol, best_val, best_cover, nodes, 0.0, "optimal", best_val, elapsed)


# ---------------------------------------------------------------- reporting

def _pct(num: float, den: float) -> float:
    if abs(num) <= 1e-12 * max(1.0, abs(den)):
        return 0.0
    if den == 0:
        return math.nan
    return 100.0 * num / den


def metrics(mdp: UncertainMdp, alpha: float, cache: BoundsCache, exact: SolveResult,
            mv_policy: Policy | None = None, ev_policy: Policy | None = None) -> dict:
    """Value of perfect information, value of the stochastic solution and the
    expected-value policy's quantile gap, in absolute and percentage terms."""
    opt = exact.value
    if mv_policy is None:
        mv_policy = mean_value_policy(mdp)
    mv = var_of_policy(mdp, mv_policy, alpha).value
    out = {
        "opt": opt,
        "lb": cache.b_l,
        "mv": mv,
        "vpi": opt - cache.b_l,
        "pct_vpi": _pct(opt - cache.b_l, opt),
        "vss": mv - opt,
        "pct_vss": _pct(mv - opt, mv),
        "e_var": math.nan,
        "e_var_gap": math.nan,
    }
    if ev_policy is None and mdp.n_actions ** mdp.n_states <= MAX_ENUMERATION:
        ev_policy = expected_value_policy(mdp)
    if ev_policy is not None:
        ev = var_of_policy(mdp, ev_policy, alpha).value
        out["e_var"] = ev
        out["e_var_gap"] = _pct(ev - opt, ev)
    return out


RESULT_FIELDS = ["instance", "alpha", "value", "status", "nodes", "wall_time", "vpi", "vss"]


def write_result_row(path, instance_id: str, alpha: float, result: SolveResult, mets: dict | None = None,
                     append: bool = True) -> None:
    path = Path(path)
    new = not path.exists() or not append
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_FIELDS)
        mets = mets or {}
        w.writerow([instance_id, alpha, repr(result.value), result.status, result.nodes,
                    f"{result.wall_time:.6f}", repr(mets.get("vpi", math.nan)), repr(mets.get("vss", math.nan))])
