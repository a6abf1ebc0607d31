"""Per-scenario value bounds, scenario fixing and big-M coefficients.

Relaxing the requirement that every scenario uses the same policy gives, per
scenario, the best and worst achievable expected costs.  Their alpha-quantiles
sandwich the optimal quantile, and comparing a scenario's own bounds against
that sandwich can decide its chance-constraint indicator in advance.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .mdp_core import DEFAULT_TOL, UncertainMdp, solve_mdp
from .quantile import var_alpha

# relative slack used when comparing bounds computed along different numerical paths
FIX_TOL = 1e-9


class Fix(str, enum.Enum):
    FREE = "free"
    FORCED0 = "forced0"
    FORCED1 = "forced1"


class BoundInconsistency(RuntimeError):
    """Scenario fixing contradicted the bound theory; indicates a bug or bad input."""


@dataclass(frozen=True)
class BoundsCache:
    alpha: float
    b_bar: np.ndarray
    b_under: np.ndarray
    v_bar: np.ndarray  # (H, S)
    v_under: np.ndarray  # (H, S)
    b_l: float
    b_u: float
    z_fixed: tuple[Fix, ...]
    big_m_global: float
    big_m_state: np.ndarray  # (H, S)
    probs: np.ndarray

    @property
    def n_scenarios(self) -> int:
        return len(self.b_bar)

    @property
    def big_m_scenario(self) -> np.ndarray:
        """Per-scenario coefficient ``max(0, b_bar[s] - b_l)`` for the quantile row.

        Unlike ``big_m_global`` this is always large enough: a scenario left out
        of the cover can cost up to ``b_bar[s]`` while ``y >= b_l``.
        """
        return np.maximum(0.0, self.b_bar - self.b_l)

    def forced(self, status: Fix) -> tuple[int, ...]:
        return tuple(s for s, f in enumerate(self.z_fixed) if f is status)

    def lower_bound_cuts(self) -> np.ndarray:
        return self.b_under.copy()


def compute_bounds(mdp: UncertainMdp, alpha: float, tol: float = DEFAULT_TOL) -> BoundsCache:
    """Solve the min- and max-cost MDP of every scenario and derive the bound cache.

    All scenarios start out free; use :func:`fix_scenarios` to fix indicators.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    n_s = mdp.n_scenarios
    v_bar = np.empty((mdp.n_states, n_s))
    v_under = np.empty((mdp.n_states, n_s))
    for s in range(n_s):
        v_bar[:, s], _ = solve_mdp(mdp.cost[s], mdp.trans[s], mdp.gamma, "max", tol)
        v_under[:, s], _ = solve_mdp(mdp.cost[s], mdp.trans[s], mdp.gamma, "min", tol)
    b_bar = mdp.q @ v_bar
    b_under = mdp.q @ v_under
    b_u = var_alpha(b_bar, mdp.probs, alpha).value
    b_l = var_alpha(b_under, mdp.probs, alpha).value
    return BoundsCache(
        alpha=alpha,
        b_bar=b_bar,
        b_under=b_under,
        v_bar=v_bar,
        v_under=v_under,
        b_l=b_l,
        b_u=b_u,
        z_fixed=(Fix.FREE,) * n_s,
        big_m_global=b_u - b_l,
        big_m_state=np.maximum(0.0, v_bar - v_under),
        probs=np.array(mdp.probs),
    )


def _slack(x: float) -> float:
    return FIX_TOL * max(1.0, abs(x))


def fix_scenarios(cache: BoundsCache, incumbent_ub: float | None = None) -> BoundsCache:
    """Force indicators whose value is implied by the bounds.

    A scenario whose best achievable cost exceeds the upper bound on the
    quantile (``b_u``, or a known feasible value if smaller) can never be in
    the cover; one whose worst cost is below ``b_l`` always is.
    """
    ub = cache.b_u if incumbent_ub is None else min(cache.b_u, incumbent_ub)
    status = []
    for s in range(cache.n_scenarios):
        drop = cache.b_under[s] > ub + _slack(ub)
        keep = cache.b_bar[s] < cache.b_l - _slack(cache.b_l)
        if drop and keep:
            raise BoundInconsistency(f"scenario {s} is forced both in and out of the cover")
        status.append(Fix.FORCED0 if drop else Fix.FORCED1 if keep else Fix.FREE)
    out_mass = sum(cache.probs[s] for s, f in enumerate(status) if f is Fix.FORCED0)
    if out_mass > 1.0 - cache.alpha + 1e-12:
        raise BoundInconsistency(
            f"scenarios forced out carry probability {out_mass:.6g} > 1 - alpha = {1 - cache.alpha:.6g}")
    return replace(cache, z_fixed=tuple(status))


def valid_lb_cut(cache: BoundsCache, s: int) -> float:
    """Coefficient of the cut ``y >= b_under[s] * z_s``."""
    return float(cache.b_under[s])


def write_bounds_csv(cache: BoundsCache, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "b_under", "b_bar", "fixed"])
        for s in range(cache.n_scenarios):
            w.writerow([s, repr(float(cache.b_under[s])), repr(float(cache.b_bar[s])), cache.z_fixed[s].value])
