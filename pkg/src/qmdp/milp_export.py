"""Write mixed-integer models of the quantile MDP in CPLEX LP text format.

Variables are named ``y`` (the quantile), ``z_s`` (scenario in the cover),
``w_i_a`` (action ``a`` in state ``i``), ``v_i_s`` (value of state ``i`` in
scenario ``s``) and ``x_i_j_a_s`` (the product ``v_j_s * w_i_a``).  Output is a
pure function of its inputs, so exporting twice yields identical bytes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp_core import UncertainMdp
from .preprocess import BoundsCache, Fix

NAIVE_BIG_M = 1e6
MAX_LINE = 200


class Variant(str, enum.Enum):
    QMDP_D_BIGM = "QMDP_D_bigM"
    QMDP_D_MCCORMICK = "QMDP_D_McCormick"
    QMDP_R_MCCORMICK_RELAX = "QMDP_R_McCormick_relax"
    QMDP_M_BIGM = "QMDP_M_bigM"

    @property
    def bigm(self) -> bool:
        return self in (Variant.QMDP_D_BIGM, Variant.QMDP_M_BIGM)

    @property
    def binary_policy(self) -> bool:
        return self is not Variant.QMDP_R_MCCORMICK_RELAX


@dataclass(frozen=True)
class ModelVariant:
    kind: Variant
    uses_cache: bool = True
    # use b_u - b_l for every quantile row instead of the per-scenario b_bar[s] - b_l
    global_big_m: bool = False

    @classmethod
    def parse(cls, text: str, uses_cache: bool = True) -> "ModelVariant":
        return cls(Variant(text), uses_cache)


@dataclass
class ModelStats:
    n_rows: int
    n_vars: int
    n_binary: int
    rows_by_family: dict


def fmt(x: float) -> str:
    """Shortest round-trip decimal, never ``-0``."""
    x = float(x)
    if x == 0.0:
        return "0"
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


class _Row:
    __slots__ = ("name", "terms", "sense", "rhs")

    def __init__(self, name: str, sense: str, rhs: float):
        self.name = name
        self.terms: dict[str, float] = {}
        self.sense = sense
        self.rhs = rhs

    def add(self, var: str, coef: float) -> "_Row":
        if coef != 0.0:
            self.terms[var] = self.terms.get(var, 0.0) + coef
        return self

    def render(self) -> list[str]:
        parts = []
        for var, c in self.terms.items():
            if c == 0.0:
                continue
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            parts.append(f"{sign} {var}" if mag == 1.0 else f"{sign} {fmt(mag)} {var}")
        if not parts:
            parts = ["0 y"]
        elif parts[0].startswith("+ "):
            parts[0] = parts[0][2:]
        parts.append(f"{self.sense} {fmt(self.rhs)}")
        lines, cur = [], f" {self.name}:"
        for p in parts:
            if len(cur) + 1 + len(p) > MAX_LINE:
                lines.append(cur)
                cur = "   "
            cur += " " + p
        lines.append(cur)
        return lines


def _names(mdp: UncertainMdp):
    H, A, S = range(mdp.n_states), range(mdp.n_actions), range(mdp.n_scenarios)
    return H, A, S


def build_rows(mdp: UncertainMdp, alpha: float, variant: ModelVariant, cache: BoundsCache | None):
    """Constraint rows, variable bounds and binary variables of the requested model."""
    if variant.uses_cache and cache is None:
        raise ValueError("a bounds cache is required when uses_cache is set")
    kind = variant.kind
    H, A, S = _names(mdp)
    g = mdp.gamma
    c, P = mdp.cost, mdp.trans
    rows: list[tuple[str, _Row]] = []

    if variant.uses_cache:
        lo = cache.v_under  # (H, S)
        hi = cache.v_bar
        m_state = cache.big_m_state
        if variant.global_big_m:
            m_scen = np.full(mdp.n_scenarios, max(0.0, cache.big_m_global))
        else:
            m_scen = cache.big_m_scenario
    else:
        lo = np.zeros((mdp.n_states, mdp.n_scenarios))
        hi = np.full((mdp.n_states, mdp.n_scenarios), NAIVE_BIG_M)
        m_state = np.full((mdp.n_states, mdp.n_scenarios), NAIVE_BIG_M)
        m_scen = np.full(mdp.n_scenarios, NAIVE_BIG_M)

    for i in H:
        r = _Row(f"policy_{i}", "=", 1.0)
        for a in A:
            r.add(f"w_{i}_{a}", 1.0)
        rows.append(("policy", r))

    r = _Row("cover", ">=", alpha)
    for s in S:
        r.add(f"z_{s}", float(mdp.probs[s]))
    rows.append(("cover", r))

    # q.v_s <= y + (1 - z_s) M_s
    for s in S:
        r = _Row(f"quantile_{s}", "<=", float(m_scen[s]))
        for i in H:
            r.add(f"v_{i}_{s}", float(mdp.q[i]))
        r.add("y", -1.0)
        r.add(f"z_{s}", float(m_scen[s]))
        rows.append(("quantile", r))

    if kind.bigm:
        # v_is >= c + g P v - (1 - w_ia) M_is
        for s in S:
            for i in H:
                for a in A:
                    big = float(m_state[i, s])
                    r = _Row(f"bellman_{i}_{a}_{s}", ">=", float(c[s, i, a]) - big)
                    r.add(f"v_{i}_{s}", 1.0)
                    for j in H:
                        r.add(f"v_{j}_{s}", -g * float(P[s, i, a, j]))
                    r.add(f"w_{i}_{a}", -big)
                    rows.append(("bellman", r))
    else:
        # v_is >= sum_a c w_ia + g sum_a sum_j P x_ija^s
        for s in S:
            for i in H:
                r = _Row(f"bellman_{i}_{s}", ">=", 0.0)
                r.add(f"v_{i}_{s}", 1.0)
                for a in A:
                    r.add(f"w_{i}_{a}", -float(c[s, i, a]))
                for a in A:
                    for j in H:
                        r.add(f"x_{i}_{j}_{a}_{s}", -g * float(P[s, i, a, j]))
                rows.append(("bellman", r))
        # McCormick envelopes of x = v_j w_ia over lo_j <= v_j <= hi_j
        for s in S:
            for i in H:
                for a in A:
                    for j in H:
                        x, v, w = f"x_{i}_{j}_{a}_{s}", f"v_{j}_{s}", f"w_{i}_{a}"
                        l, u = float(lo[j, s]), float(hi[j, s])
                        tag = f"{i}_{j}_{a}_{s}"
                        rows.append(("mccormick", _Row(f"mc_lo_{tag}", ">=", 0.0).add(x, 1.0).add(w, -l)))
                        rows.append(("mccormick", _Row(f"mc_hi_{tag}", "<=", 0.0).add(x, 1.0).add(w, -u)))
                        rows.append(("mccormick", _Row(f"mc_vu_{tag}", ">=", -u)
                                     .add(x, 1.0).add(v, -1.0).add(w, -u)))
                        rows.append(("mccormick", _Row(f"mc_vl_{tag}", "<=", -l)
                                     .add(x, 1.0).add(v, -1.0).add(w, -l)))

    if kind is Variant.QMDP_M_BIGM:
        # w_ia <= sum_{a' <= a} w_i'a' for i' > i
        for i in H:
            for ip in H:
                if ip <= i:
                    continue
                for a in A:
                    r = _Row(f"monotone_{i}_{ip}_{a}", "<=", 0.0)
                    r.add(f"w_{i}_{a}", 1.0)
                    for ap in range(a + 1):
                        r.add(f"w_{ip}_{ap}", -1.0)
                    rows.append(("monotone", r))

    if variant.uses_cache:
        for s in S:
            r = _Row(f"lbcut_{s}", ">=", 0.0)
            r.add("y", 1.0)
            r.add(f"z_{s}", -float(cache.b_under[s]))
            rows.append(("cut", r))

    # variable bounds, in declaration order
    bounds: list[str] = []
    if variant.uses_cache:
        bounds.append(f" {fmt(cache.b_l)} <= y <= {fmt(cache.b_u)}")
    else:
        bounds.append(" -inf <= y <= +inf")
    for s in S:
        for i in H:
            if variant.uses_cache or not kind.bigm:
                bounds.append(f" {fmt(lo[i, s])} <= v_{i}_{s} <= {fmt(hi[i, s])}")
            else:
                bounds.append(f" 0 <= v_{i}_{s} <= +inf")
    if not kind.binary_policy:
        for i in H:
            for a in A:
                bounds.append(f" 0 <= w_{i}_{a} <= 1")
    if not kind.bigm:
        for s in S:
            for i in H:
                for a in A:
                    for j in H:
                        bounds.append(f" -inf <= x_{i}_{j}_{a}_{s} <= +inf")
    fixed = {}
    if variant.uses_cache:
        for s, f in enumerate(cache.z_fixed):
            if f is Fix.FORCED0:
                fixed[s] = 0
            elif f is Fix.FORCED1:
                fixed[s] = 1
    for s in S:
        if s in fixed:
            bounds.append(f" {fixed[s]} <= z_{s} <= {fixed[s]}")

    binaries = [f"z_{s}" for s in S]
    if kind.binary_policy:
        binaries += [f"w_{i}_{a}" for i in H for a in A]
    return rows, bounds, binaries


def render_model(mdp: UncertainMdp, alpha: float, variant: ModelVariant,
                 cache: BoundsCache | None = None) -> str:
    rows, bounds, binaries = build_rows(mdp, alpha, variant, cache)
    mode = "tightened" if variant.uses_cache else "basic"
    out = [
        f"\\ {variant.kind.value} ({mode}) alpha={fmt(alpha)} gamma={fmt(mdp.gamma)}",
        f"\\ |S|={mdp.n_scenarios} |H|={mdp.n_states} |A|={mdp.n_actions}",
        "Minimize",
        " obj: y",
        "Subject To",
    ]
    for _, r in rows:
        out.extend(r.render())
    out.append("Bounds")
    out.extend(bounds)
    out.append("Binaries")
    line = ""
    for b in binaries:
        if len(line) + len(b) + 1 > MAX_LINE:
            out.append(line)
            line = ""
        line += " " + b
    if line:
        out.append(line)
    out.append("End")
    return "\n".join(out) + "\n"


def model_stats(mdp: UncertainMdp, alpha: float, variant: ModelVariant,
                cache: BoundsCache | None = None) -> ModelStats:
    rows, _, binaries = build_rows(mdp, alpha, variant, cache)
    fam: dict[str, int] = {}
    for f, _ in rows:
        fam[f] = fam.get(f, 0) + 1
    H, A, S = mdp.n_states, mdp.n_actions, mdp.n_scenarios
    n_vars = 1 + S + H * A + H * S + (0 if variant.kind.bigm else S * A * H * H)
    return ModelStats(len(rows), n_vars, len(binaries), fam)


def model_filename(instance: str, variant: ModelVariant, alpha: float) -> str:
    return f"{instance}_{variant.kind.value}_{fmt(alpha)}.lp"


def export_model(mdp: UncertainMdp, alpha: float, variant: ModelVariant, cache: BoundsCache | None,
                 path) -> Path:
    """Write the model to ``path`` (a file, or a directory to use the standard file name)."""
    text = render_model(mdp, alpha, variant, cache)
    path = Path(path)
    if path.is_dir():
        path = path / model_filename("instance", variant, alpha)
    with path.open("w", newline="\n") as fh:
        fh.write(text)
    return path
