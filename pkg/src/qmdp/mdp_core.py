"""Scenario-based MDP data model and per-scenario evaluation.

An :class:`UncertainMdp` holds one discounted-cost MDP per scenario, all sharing
the same state and action spaces, together with the scenario probabilities and
the initial-state distribution.  Evaluation routines work on one scenario at a
time and never couple scenarios; coupling lives in the quantile and solver
modules.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PROB_TOL = 1e-9
DEFAULT_TOL = 1e-8
# dense LU up to this many states, successive approximation beyond
DIRECT_SOLVE_MAX_STATES = 512


class InstanceError(ValueError):
    """Raised when an instance violates a structural invariant."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScenarioParams:
    """Cost matrix ``cost[i, a]`` and transition tensor ``trans[i, a, j]``."""

    cost: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        cost = np.array(self.cost, dtype=float)
        trans = np.array(self.trans, dtype=float)
        if cost.ndim != 2:
            raise InstanceError(f"cost must be 2-d (state, action), got shape {cost.shape}")
        n, m = cost.shape
        if trans.shape != (n, m, n):
            raise InstanceError(f"trans must have shape {(n, m, n)}, got {trans.shape}")
        if not np.all(np.isfinite(cost)):
            raise InstanceError("non-finite cost entry")
        if not np.all(np.isfinite(trans)):
            raise InstanceError("non-finite transition entry")
        bad = np.argwhere(cost < 0)
        if len(bad):
            i, a = bad[0]
            raise InstanceError(f"negative cost at (i={i}, a={a}): {cost[i, a]}")
        bad = np.argwhere(trans < 0)
        if len(bad):
            i, a, j = bad[0]
            raise InstanceError(f"negative transition probability at (i={i}, a={a}, j={j})")
        sums = trans.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
        if len(bad):
            i, a = bad[0]
            raise InstanceError(f"transition row (i={i}, a={a}) sums to {sums[i, a]!r}")
        object.__setattr__(self, "cost", _readonly(cost))
        object.__setattr__(self, "trans", _readonly(trans))

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[1]


class UncertainMdp:
    """A finite MDP whose costs and transitions are drawn from a finite scenario set.

    The per-scenario tensors are also stacked into ``cost`` with shape
    ``(S, H, A)`` and ``trans`` with shape ``(S, H, A, H)``.
    """

    def __init__(self, gamma: float, q: Sequence[float], scenarios: Sequence[ScenarioParams],
                 probs: Sequence[float]):
        if not 0.0 <= gamma < 1.0:
            raise InstanceError(f"gamma must lie in [0, 1), got {gamma}")
        scenarios = [s if isinstance(s, ScenarioParams) else ScenarioParams(*s) for s in scenarios]
        if not scenarios:
            raise InstanceError("at least one scenario is required")
        shape = (scenarios[0].n_states, scenarios[0].n_actions)
        for k, s in enumerate(scenarios):
            if (s.n_states, s.n_actions) != shape:
                raise InstanceError(f"scenario {k} has dimensions {(s.n_states, s.n_actions)}, expected {shape}")
        q = np.array(q, dtype=float)
        probs = np.array(probs, dtype=float)
        if q.shape != (shape[0],):
            raise InstanceError(f"q must have length {shape[0]}")
        if np.any(q < 0) or abs(q.sum() - 1.0) > PROB_TOL:
            raise InstanceError("q must be a probability vector")
        if probs.shape != (len(scenarios),):
            raise InstanceError(f"probs must have length {len(scenarios)}")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise InstanceError("scenario probabilities must be positive and sum to 1")
        self.gamma = float(gamma)
        self.q = _readonly(q)
        self.probs = _readonly(probs)
        self.scenarios = tuple(scenarios)
        self.cost = _readonly(np.stack([s.cost for s in scenarios]))
        self.trans = _readonly(np.stack([s.trans for s in scenarios]))

    @property
    def n_states(self) -> int:
        return self.cost.shape[1]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[2]

    @property
    def n_scenarios(self) -> int:
        return self.cost.shape[0]

    def __repr__(self):
        return (f"UncertainMdp(|S|={self.n_scenarios}, |H|={self.n_states}, "
                f"|A|={self.n_actions}, gamma={self.gamma})")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "q": self.q.tolist(),
            "probs": self.probs.tolist(),
            "scenarios": [{"cost": s.cost.tolist(), "trans": s.trans.tolist()} for s in self.scenarios],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UncertainMdp":
        try:
            scenarios = []
            for k, s in enumerate(d["scenarios"]):
                try:
                    scenarios.append(ScenarioParams(np.array(s["cost"], dtype=float),
                                                    np.array(s["trans"], dtype=float)))
                except (InstanceError, ValueError) as e:
                    raise InstanceError(f"scenario s={k}: {e}") from None
            return cls(d["gamma"], d["q"], scenarios, d["probs"])
        except KeyError as e:
            raise InstanceError(f"missing field {e.args[0]!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "UncertainMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Policy:
    """Stationary policy stored as a row-stochastic matrix ``w[i, a]``.

    A deterministic policy is exactly a matrix of unit rows; ``actions`` is then
    the tuple of chosen action indices, otherwise ``None``.
    """

    matrix: np.ndarray

    def __post_init__(self):
        w = np.array(self.matrix, dtype=float)
        if w.ndim != 2:
            raise InstanceError("policy matrix must be 2-d (state, action)")
        if np.any(w < 0) or np.any(w > 1):
            raise InstanceError("policy probabilities must lie in [0, 1]")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > PROB_TOL):
            raise InstanceError("policy rows must sum to 1")
        object.__setattr__(self, "matrix", _readonly(w))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        if np.any(actions < 0) or np.any(actions >= n_actions):
            raise InstanceError(f"action index out of range for {n_actions} actions")
        w = np.zeros((len(actions), n_actions))
        w[np.arange(len(actions)), actions] = 1.0
        return cls(w)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.matrix == 0.0) | (self.matrix == 1.0)))

    @property
    def actions(self):
        if not self.is_deterministic:
            return None
        return tuple(int(a) for a in self.matrix.argmax(axis=1))

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def __repr__(self):
        acts = self.actions
        if acts is not None:
            return f"Policy.deterministic({list(acts)})"
        return f"Policy({self.matrix.tolist()})"


def _check_policy(mdp: UncertainMdp, pol: Policy) -> None:
    if pol.matrix.shape != (mdp.n_states, mdp.n_actions):
        raise InstanceError(f"policy shape {pol.matrix.shape} does not match "
                            f"({mdp.n_states}, {mdp.n_actions})")


def policy_system(mdp: UncertainMdp, s: int, pol: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(c_pi, P_pi)`` for scenario ``s`` under ``pol``."""
    _check_policy(mdp, pol)
    w = pol.matrix
    c_pi = np.einsum("ia,ia->i", w, mdp.cost[s])
    p_pi = np.einsum("ia,iaj->ij", w, mdp.trans[s])
    return c_pi, p_pi


def stopping_threshold(tol: float, gamma: float) -> float:
    """Sup-norm step below which successive approximation has converged to ``tol``."""
    if gamma == 0.0:
        return np.inf
    return tol * (1.0 - gamma) / gamma


def evaluate_policy(mdp: UncertainMdp, s: int, pol: Policy, tol: float = DEFAULT_TOL,
                    method: str = "auto") -> np.ndarray:
    """Value function of ``pol`` in scenario ``s``: the fixed point of ``v = c_pi + gamma P_pi v``.

    ``method`` is ``"direct"`` (dense LU), ``"iterative"`` (successive
    approximation) or ``"auto"`` (direct up to 512 states).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    c_pi, p_pi = policy_system(mdp, s, pol)
    n = mdp.n_states
    if method == "auto":
        method = "direct" if n <= DIRECT_SOLVE_MAX_STATES else "iterative"
    if method == "direct":
        v = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, c_pi)
    elif method == "iterative":
        v = np.zeros(n)
        thr = stopping_threshold(tol, mdp.gamma)
        while True:
            v_new = c_pi + mdp.gamma * (p_pi @ v)
            step = np.max(np.abs(v_new - v))
            v = v_new
            if step < thr:
                break
            if not np.all(np.isfinite(v)):
                raise FloatingPointError("policy evaluation diverged")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite value function")
    return v


def expected_cost(mdp: UncertainMdp, s: int, pol: Policy, tol: float = DEFAULT_TOL) -> float:
    """Expected total discounted cost ``q . v`` of ``pol`` in scenario ``s``."""
    return float(mdp.q @ evaluate_policy(mdp, s, pol, tol))


def scenario_costs(mdp: UncertainMdp, pol: Policy, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Expected total discounted cost of ``pol`` in every scenario."""
    return np.array([expected_cost(mdp, s, pol, tol) for s in range(mdp.n_scenarios)])


def greedy_actions(qvals: np.ndarray, sense: str = "min", current: np.ndarray | None = None) -> np.ndarray:
    """Greedy action per row of ``qvals``; near-ties go to the smallest index.

    With ``current`` given, an action is only replaced when the improvement is
    above round-off, which keeps policy iteration from cycling.
    """
    sign = 1.0 if sense == "min" else -1.0
    x = sign * qvals
    best = x.min(axis=1)
    slack = 1e-12 * np.maximum(1.0, np.abs(best))
    near = x <= (best + slack)[:, None]
    acts = near.argmax(axis=1)
    if current is not None:
        keep = near[np.arange(len(current)), current]
        acts = np.where(keep, current, acts)
    return acts


def solve_mdp(cost: np.ndarray, trans: np.ndarray, gamma: float, sense: str = "min",
              tol: float = DEFAULT_TOL, allowed: np.ndarray | None = None,
              max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and greedy actions of a single MDP.

    Value iteration runs until the sup-norm step drops below
    ``tol (1 - gamma) / gamma``; the greedy policy is then polished with exact
    policy-iteration steps so the returned values are the exact optimum up to
    linear-solve round-off.  ``allowed`` is an optional boolean ``(H, A)`` mask
    of admissible actions.
    """
    if sense not in ("min", "max"):
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    n, m = cost.shape
    fill = np.inf if sense == "min" else -np.inf
    reduce = np.min if sense == "min" else np.max
    if allowed is not None and not np.all(allowed.any(axis=1)):
        raise ValueError("every state needs at least one allowed action")

    def qvalues(v):
        qv = cost + gamma * (trans @ v)
        if allowed is not None:
            qv = np.where(allowed, qv, fill)
        return qv

    v = np.zeros(n)
    thr = stopping_threshold(tol, gamma)
    for _ in range(max_iter):
        v_new = reduce(qvalues(v), axis=1)
        if not np.all(np.isfinite(v_new)):
            raise FloatingPointError("value iteration produced non-finite values")
        step = np.max(np.abs(v_new - v))
        v = v_new
        if step < thr:
            break
    acts = greedy_actions(qvalues(v), sense)
    return policy_iteration(cost, trans, gamma, sense, acts, allowed, max_iter)


def policy_iteration(cost: np.ndarray, trans: np.ndarray, gamma: float, sense: str,
                     init: np.ndarray, allowed: np.ndarray | None = None,
                     max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Howard policy iteration from the admissible action vector ``init``.

    Returns exact values of the final policy and its greedy actions (smallest
    index among near-ties).
    """
    n = cost.shape[0]
    rows = np.arange(n)
    fill = np.inf if sense == "min" else -np.inf
    acts = np.asarray(init, dtype=int)
    if allowed is not None and not np.all(allowed[rows, acts]):
        raise ValueError("initial policy uses a disallowed action")
    eye = np.eye(n)
    for _ in range(max_iter):
        v = np.linalg.solve(eye - gamma * trans[rows, acts], cost[rows, acts])
        qv = cost + gamma * (trans @ v)
        if allowed is not None:
            qv = np.where(allowed, qv, fill)
        new = greedy_actions(qv, sense, current=acts)
        if np.array_equal(new, acts):
            break
        acts = new
    else:
        raise RuntimeError("policy iteration did not terminate")
    return v, greedy_actions(qv, sense)


def optimal_value(mdp: UncertainMdp, s: int, sense: str = "min",
                  tol: float = DEFAULT_TOL) -> tuple[np.ndarray, Policy]:
    """Min- or max-cost value function of scenario ``s`` and its greedy deterministic policy."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    v, acts = solve_mdp(mdp.cost[s], mdp.trans[s], mdp.gamma, sense, tol)
    return v, Policy.deterministic(acts, mdp.n_actions)


def bellman_residual(mdp: UncertainMdp, s: int, pol: Policy, v: np.ndarray) -> float:
    c_pi, p_pi = policy_system(mdp, s, pol)
    return float(np.max(np.abs(v - (c_pi + mdp.gamma * p_pi @ v))))


def randomization_counterexample(gamma: float = 0.99) -> UncertainMdp:
    """Single-state, two-action, two-scenario instance where randomizing beats every
    deterministic policy.  Action costs are (0, 2) in scenario 0 and (2, 0) in
    scenario 1."""
    trans = np.ones((1, 2, 1))
    return UncertainMdp(gamma, [1.0],
                        [ScenarioParams([[0.0, 2.0]], trans), ScenarioParams([[2.0, 0.0]], trans)],
                        [0.5, 0.5])


def random_mdp(n_states: int, n_actions: int, n_scenarios: int, rng=None, gamma: float = 0.9,
               cost_scale: float = 10.0, probs=None) -> UncertainMdp:
    """Random instance with uniform costs, Dirichlet transition rows and uniform ``q``."""
    rng = np.random.default_rng(rng)
    scenarios = []
    for _ in range(n_scenarios):
        cost = rng.uniform(0.0, cost_scale, size=(n_states, n_actions))
        trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        scenarios.append(ScenarioParams(cost, trans))
    if probs is None:
        probs = np.full(n_scenarios, 1.0 / n_scenarios)
    q = np.full(n_states, 1.0 / n_states)
    return UncertainMdp(gamma, q, scenarios, probs)
