"""Value-at-risk over a finite, weighted scenario distribution."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .mdp_core import DEFAULT_TOL, Policy, UncertainMdp, scenario_costs

# slack on the cumulative-probability test so that e.g. three thirds reach alpha=1
CUM_TOL = 1e-12


class VarResult(NamedTuple):
    value: float
    cut_index: int
    order: np.ndarray

    @property
    def satisfied(self) -> tuple[int, ...]:
        """Scenarios in the ordered prefix that reaches probability alpha."""
        return tuple(int(s) for s in self.order[: self.cut_index])


def var_alpha(values, probs, alpha: float) -> VarResult:
    """Alpha-quantile of a discrete distribution.

    Values are sorted ascending (stable, so ties keep scenario order) and the
    smallest prefix whose probability reaches ``alpha`` is found.  ``cut_index``
    is the length of that prefix.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if values.shape != probs.shape:
        raise ValueError("values and probs must have the same length")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    order = np.argsort(values, kind="stable")
    if alpha == 1.0:
        return VarResult(float(values[order[-1]]), len(values), order)
    cum = np.cumsum(probs[order])
    k = int(np.argmax(cum >= alpha - CUM_TOL)) + 1
    if cum[k - 1] < alpha - CUM_TOL:
        k = len(values)
    return VarResult(float(values[order[k - 1]]), k, order)


class PolicyVar(NamedTuple):
    value: float
    satisfied: tuple[int, ...]
    costs: np.ndarray


def var_of_policy(mdp: UncertainMdp, pol: Policy, alpha: float, tol: float = DEFAULT_TOL) -> PolicyVar:
    """VaR of the per-scenario expected discounted cost of ``pol``."""
    costs = scenario_costs(mdp, pol, tol)
    res = var_alpha(costs, mdp.probs, alpha)
    return PolicyVar(res.value, res.satisfied, costs)
