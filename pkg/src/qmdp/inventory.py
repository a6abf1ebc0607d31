"""Perishable relief-item inventory instances.

States are inventory levels counted in batches, ``0..K`` with ``K`` the capacity
in batches.  Action ``a`` dispatches ``a`` collection vehicles, each adding
``packs_per_vehicle / batch_size`` batches.  Per scenario, weekly demand and
supply are Poisson with rates given in batches, and newly arriving items share
one shelf life ``t_e``: if the stock cannot be consumed before ``t_e`` the new
arrivals are discarded.

Poisson supports are truncated at the ``1 - tail_eps/2`` quantiles of demand and
supply; probabilities are renormalized over the kept support.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .mdp_core import ScenarioParams, UncertainMdp


@dataclass(frozen=True)
class InventoryConfig:
    capacity_units: int = 50
    batch_size: int = 10
    n_vehicles: int = 4
    packs_per_vehicle: int = 20
    # per batch and period; procurement per action.  Placeholder magnitudes.
    unit_holding: float = 50.0
    unit_disposal: float = 500.0
    unit_shortage: float = 2000.0
    vehicle_cost: float = 3000.0
    action_costs: tuple[float, ...] | None = None
    cost_scale: float = 1e-3
    gamma: float = 0.99
    alpha: float = 0.95
    tail_eps: float = 1e-4
    demand_range: tuple[float, float] = (30.0, 130.0)
    supply_range: tuple[float, float] = (20.0, 80.0)
    shelf_life_range: tuple[int, int] = (1, 6)
    n_scenarios: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.capacity_units % self.batch_size:
            raise ValueError("capacity must be a multiple of the batch size")
        if self.capacity_units < self.batch_size:
            raise ValueError("capacity must hold at least one batch")
        if self.packs_per_vehicle % self.batch_size:
            raise ValueError("packs per vehicle must be a multiple of the batch size")
        if not 0.0 < self.tail_eps <= 0.1:
            raise ValueError("tail_eps must lie in (0, 0.1]")
        costs = [self.unit_holding, self.unit_disposal, self.unit_shortage, self.vehicle_cost, self.cost_scale]
        if self.action_costs is not None:
            if len(self.action_costs) != self.n_vehicles + 1:
                raise ValueError("action_costs needs one entry per action")
            costs += list(self.action_costs)
        if any(c < 0 for c in costs):
            raise ValueError("cost rates must be nonnegative")

    @property
    def capacity(self) -> int:
        """Capacity in batches."""
        return self.capacity_units // self.batch_size

    @property
    def n_states(self) -> int:
        return self.capacity + 1

    @property
    def n_actions(self) -> int:
        return self.n_vehicles + 1

    def batches(self, a: int) -> int:
        return a * self.packs_per_vehicle // self.batch_size

    def procurement(self, a: int) -> float:
        if self.action_costs is not None:
            return float(self.action_costs[a])
        return a * self.vehicle_cost

    @classmethod
    def from_dict(cls, d: dict) -> "InventoryConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown generator parameters: {sorted(unknown)}")
        d = dict(d)
        for key in ("demand_range", "supply_range", "shelf_life_range", "action_costs"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "InventoryConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def truncation_point(mu: float, eps_half: float) -> int:
    """Smallest ``n`` with ``P(Poisson(mu) > n) <= eps_half``."""
    if mu <= 0:
        return 0
    return int(poisson.isf(eps_half, mu))


@dataclass(frozen=True)
class InventoryScenario:
    mu_d: float
    mu_u: float
    t_e: float
    tail_eps: float = 1e-4
    delta_min: int = field(init=False)
    delta_max: int = field(init=False)

    def __post_init__(self):
        if self.mu_d < 0 or self.mu_u < 0:
            raise ValueError("rates must be nonnegative")
        object.__setattr__(self, "delta_min", -truncation_point(self.mu_d, self.tail_eps / 2))
        object.__setattr__(self, "delta_max", truncation_point(self.mu_u, self.tail_eps / 2))

    @property
    def d_max(self) -> int:
        return -self.delta_min

    def delta_weights(self) -> tuple[np.ndarray, float]:
        """Normalized probability of each net change ``U - D`` in ``[delta_min, delta_max]``
        and the mass discarded by the truncation."""
        d = np.arange(self.d_max + 1)
        fd = poisson.pmf(d, self.mu_d)
        u = np.arange(self.d_max + self.delta_max + 1)
        fu = poisson.pmf(u, self.mu_u)
        deltas = np.arange(self.delta_min, self.delta_max + 1)
        w = np.zeros(len(deltas))
        for k, delta in enumerate(deltas):
            uu = d + delta
            ok = uu >= 0
            w[k] = float(fd[ok] @ fu[uu[ok]])
        total = w.sum()
        if total <= 0:
            raise ValueError("truncated support carries no probability")
        return w / total, 1.0 - total


def _check_scenario(scn: InventoryScenario) -> None:
    if scn.delta_min == 0 and scn.delta_max == 0 and (scn.mu_d > 0 or scn.mu_u > 0):
        raise ValueError("degenerate truncation: raise the rates or lower tail_eps")


def base_row(scn: InventoryScenario, level: int, capacity: int) -> np.ndarray:
    """Next-level distribution from ``level`` (which may exceed capacity) ignoring expiry
    and actions: levels below 0 are lost demand, levels above capacity overflow."""
    w, _ = scn.delta_weights()
    row = np.zeros(capacity + 1)
    for k, delta in enumerate(range(scn.delta_min, scn.delta_max + 1)):
        row[min(max(level + delta, 0), capacity)] += w[k]
    return row / row.sum()


def extended_kernel(scn: InventoryScenario, capacity: int, extra_levels: int = 0) -> np.ndarray:
    """Kernel ``P_hat[m, j]`` for starting levels ``m = 0..capacity + extra_levels``."""
    _check_scenario(scn)
    return np.array([base_row(scn, m, capacity) for m in range(capacity + extra_levels + 1)])


def base_transition(scn: InventoryScenario, cfg: InventoryConfig) -> np.ndarray:
    """Kernel ``P_hat[i, j]`` over the inventory levels, ignoring expiry and actions."""
    return extended_kernel(scn, cfg.capacity)


def _kernel_for(scn, cfg):
    return extended_kernel(scn, cfg.capacity, cfg.batches(cfg.n_vehicles))


def erlang_expire(scn: InventoryScenario, k: int) -> float:
    """Probability that ``k`` batches are not all consumed before the shelf life runs out:
    ``P(N(t_e mu_d) <= k - 1)``; zero for ``k = 0``."""
    if k <= 0:
        return 0.0
    return float(poisson.cdf(k - 1, scn.t_e * scn.mu_d))


def action_transition(scn: InventoryScenario, cfg: InventoryConfig, a: int,
                      p_hat: np.ndarray | None = None) -> np.ndarray:
    """Transition matrix under action ``a`` with the batch-expiry adjustment.

    From ``m = i + n_a``: a level ``j > m`` survives only if the stock does not
    expire, and expired mass is folded back onto ``m`` (arrivals used first, the
    rest discarded).  Expired mass is folded before overflow is attributed, so
    the expiry weight applied at ``j = capacity`` uses ``f_e(capacity)``.
    """
    if not 0 <= a <= cfg.n_vehicles:
        raise ValueError(f"action {a} out of range")
    K = cfg.capacity
    n_a = cfg.batches(a)
    if p_hat is None:
        p_hat = _kernel_for(scn, cfg)
    out = np.zeros((K + 1, K + 1))
    fe = np.array([erlang_expire(scn, j) for j in range(K + 1)])
    for i in range(K + 1):
        m = i + n_a
        row = p_hat[m].copy()
        if m < K:
            hi = min(K, m + scn.delta_max)
            up = np.arange(m + 1, hi + 1)
            expired = float(fe[up] @ row[up])
            row[m + 1:] *= 1.0 - fe[m + 1:]
            row[m] += expired
        out[i] = row / row.sum()
    return out


def action_cost(scn: InventoryScenario, cfg: InventoryConfig, i: int, a: int,
                p_hat: np.ndarray | None = None) -> float:
    """Scaled expected one-period cost: holding + expected disposal + expected shortage + procurement."""
    K = cfg.capacity
    n_a = cfg.batches(a)
    m = i + n_a
    if p_hat is None:
        p_hat = _kernel_for(scn, cfg)
    w, _ = scn.delta_weights()
    deltas = np.arange(scn.delta_min, scn.delta_max + 1)
    # disposal of expired arrivals, reaching level m + delta <= K
    expired = 0.0
    for delta in range(1, min(K - m, scn.delta_max) + 1):
        expired += erlang_expire(scn, m + delta) * p_hat[m, m + delta] * delta
    # arrivals beyond capacity
    over = np.maximum(m + deltas - K, 0)
    overflow = float(w @ over)
    # unmet demand
    short = np.maximum(-(m + deltas), 0)
    shortage = float(w @ short)
    total = (cfg.unit_holding * i + cfg.unit_disposal * (expired + overflow)
             + cfg.unit_shortage * shortage + cfg.procurement(a))
    return total * cfg.cost_scale


def scenario_params(scn: InventoryScenario, cfg: InventoryConfig) -> ScenarioParams:
    K = cfg.capacity
    p_hat = _kernel_for(scn, cfg)
    trans = np.stack([action_transition(scn, cfg, a, p_hat) for a in range(cfg.n_actions)], axis=1)
    cost = np.array([[action_cost(scn, cfg, i, a, p_hat) for a in range(cfg.n_actions)]
                     for i in range(K + 1)])
    return ScenarioParams(cost, trans)


def sample_scenarios(cfg: InventoryConfig) -> list[InventoryScenario]:
    """Uniform demand and supply rates (converted to batches) and a uniform integer shelf life."""
    rng = np.random.default_rng(cfg.rng_seed)
    out = []
    for _ in range(cfg.n_scenarios):
        mu_d = rng.uniform(*cfg.demand_range) / cfg.batch_size
        mu_u = rng.uniform(*cfg.supply_range) / cfg.batch_size
        t_e = int(rng.integers(cfg.shelf_life_range[0], cfg.shelf_life_range[1] + 1))
        out.append(InventoryScenario(mu_d, mu_u, t_e, cfg.tail_eps))
    return out


def instance_from_scenarios(cfg: InventoryConfig, scenarios, probs=None) -> UncertainMdp:
    n = len(scenarios)
    params = [scenario_params(scn, cfg) for scn in scenarios]
    if probs is None:
        probs = np.full(n, 1.0 / n)
    q = np.full(cfg.n_states, 1.0 / cfg.n_states)
    return UncertainMdp(cfg.gamma, q, params, probs)


def generate_instance(cfg: InventoryConfig) -> UncertainMdp:
    """Equiprobable scenarios sampled from ``cfg``'s ranges; deterministic in ``rng_seed``."""
    return instance_from_scenarios(cfg, sample_scenarios(cfg))


def read_scenario_table(path, tail_eps: float = 1e-4) -> list[InventoryScenario]:
    """Scenarios from a CSV with columns ``scenario, demand_rate, supply_rate, shelf_life``.
    Rates are in batches per period."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(InventoryScenario(float(row["demand_rate"]), float(row["supply_rate"]),
                                         float(row["shelf_life"]), tail_eps))
    return out


def bundled_scenarios(name: str = "five_scenarios.csv", tail_eps: float = 1e-4):
    return read_scenario_table(Path(__file__).parent / "data" / name, tail_eps)
