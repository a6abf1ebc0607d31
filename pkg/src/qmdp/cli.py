"""Command-line front end.

Subcommands::

    qmdp generate   build an instance (inventory generator, random, or the one-state mixing example)
    qmdp validate   check an instance file and print summary statistics
    qmdp bounds     per-scenario bounds and fixed indicators
    qmdp heuristic  scenario selection + robust value iteration
    qmdp solve      branch and bound (or brute force) for the minimum-VaR policy
    qmdp export     write an LP model
    qmdp experiment grid of replications x alphas x methods, reported as CSV
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exact_solver import SearchSpaceTooLarge, brute_force, expected_value_policy, solve_exact
from .heuristics import DEFAULT_EPS, initial_solution, mean_value_policy
from .inventory import InventoryConfig, bundled_scenarios, generate_instance, instance_from_scenarios
from .mdp_core import InstanceError, UncertainMdp, random_mdp, randomization_counterexample
from .milp_export import ModelVariant, Variant, export_model, model_filename, model_stats
from .preprocess import Fix, compute_bounds, fix_scenarios, write_bounds_csv
from .quantile import var_of_policy

DEFAULT_GAMMA = 0.99
DEFAULT_TIME_LIMIT = 3600.0
METHODS = ("exact", "exact_monotone", "brute", "mv", "alg1", "bounds")
REPORT_FIELDS = ["instance", "n_scenarios", "n_states", "n_actions", "alpha", "method", "value",
                 "pct_vpi", "pct_vss", "pct_evar", "pct_gap", "nodes", "wall_ms", "status", "message"]


# ---------------------------------------------------------------- instances

def build_instance(source: dict, seed: int | None = None, gamma: float | None = None) -> tuple[str, UncertainMdp]:
    """Instance and a short id from a source description.

    ``source["kind"]`` is one of ``inventory`` (remaining keys are
    :class:`InventoryConfig` fields), ``five`` (bundled five-scenario rates with
    an inventory config), ``random`` (``n_states``, ``n_actions``,
    ``n_scenarios``, optional ``cost_scale``), ``example`` or ``file``
    (``path``).  ``seed`` and ``gamma`` override the source's own values.
    """
    source = dict(source)
    kind = source.pop("kind", "inventory")
    if kind in ("inventory", "five"):
        cfg = InventoryConfig.from_dict(source)
        if seed is not None:
            cfg = replace(cfg, rng_seed=seed)
        if gamma is not None:
            cfg = replace(cfg, gamma=gamma)
        if kind == "five":
            return "five", instance_from_scenarios(cfg, bundled_scenarios(tail_eps=cfg.tail_eps))
        return f"inv{cfg.rng_seed}", generate_instance(cfg)
    if kind == "random":
        seed = source.pop("seed", 0) if seed is None else seed
        g = source.pop("gamma", DEFAULT_GAMMA) if gamma is None else gamma
        mdp = random_mdp(source.pop("n_states"), source.pop("n_actions"), source.pop("n_scenarios"),
                         seed, gamma=g, **source)
        return f"rand{seed}", mdp
    if kind == "example":
        return "mixing", randomization_counterexample(DEFAULT_GAMMA if gamma is None else gamma)
    if kind == "file":
        path = Path(source["path"])
        return path.stem, UncertainMdp.load(path)
    raise ValueError(f"unknown instance kind {kind!r}")


def _load(path) -> UncertainMdp:
    return UncertainMdp.load(path)


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentSpec:
    source: dict
    alphas: list[float]
    methods: list[str]
    replications: int = 1
    seed: int = 0
    time_limit: float = DEFAULT_TIME_LIMIT
    gamma: float | None = None
    out: str | None = None
    export_dir: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            if m not in METHODS and not m.startswith("export:"):
                raise ValueError(f"unknown method {m!r}")
            if m.startswith("export:"):
                Variant(m.split(":", 1)[1])
        for a in self.alphas:
            if not 0.0 < a <= 1.0:
                raise ValueError(f"alpha must lie in (0, 1], got {a}")
        if not self.alphas:
            raise ValueError("at least one alpha is required")
        if self.replications < 1:
            raise ValueError("replications must be positive")

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls(**json.loads(Path(path).read_text()))


def _pct(num: float, den: float) -> float:
    if not (math.isfinite(num) and math.isfinite(den)):
        return math.nan
    if abs(num) <= 1e-12 * max(1.0, abs(den)):
        return 0.0
    return 100.0 * num / den if den != 0 else math.nan


class _InstanceRuns:
    """Per-instance quantities shared by every method and alpha."""

    def __init__(self, mdp: UncertainMdp, time_limit: float):
        self.mdp = mdp
        self.time_limit = time_limit
        self._mv = None
        self._ev = None
        self._caches = {}

    def cache(self, alpha):
        if alpha not in self._caches:
            self._caches[alpha] = compute_bounds(self.mdp, alpha)
        return self._caches[alpha]

    def mv_policy(self):
        if self._mv is None:
            self._mv = mean_value_policy(self.mdp)
        return self._mv

    def ev_policy(self):
        if self._ev is None:
            try:
                self._ev = expected_value_policy(self.mdp)
            except SearchSpaceTooLarge:
                self._ev = False
        return self._ev or None

    def run(self, method: str, alpha: float, export_dir: Path | None, instance_id: str) -> dict:
        mdp = self.mdp
        cache = self.cache(alpha)
        row = {"value": math.nan, "nodes": "", "status": "ok", "message": "", "pct_gap": math.nan}
        if method in ("exact", "exact_monotone"):
            res = solve_exact(mdp, alpha, fix_scenarios(cache), monotone=method == "exact_monotone",
                              time_limit=self.time_limit)
            row.update(value=res.value, nodes=res.nodes, status=res.status, pct_gap=100.0 * res.gap)
        elif method == "brute":
            res = brute_force(mdp, alpha)
            row.update(value=res.value, nodes=res.nodes, status=res.status, pct_gap=0.0)
        elif method == "mv":
            row["value"] = var_of_policy(mdp, self.mv_policy(), alpha).value
        elif method == "alg1":
            row["value"] = initial_solution(mdp, cache, alpha)[1]
        elif method == "bounds":
            row.update(value=cache.b_l, pct_gap=_pct(cache.b_u - cache.b_l, cache.b_u),
                       message=f"b_u={cache.b_u!r}")
        elif method.startswith("export:"):
            variant = ModelVariant(Variant(method.split(":", 1)[1]))
            target = (export_dir or Path(".")) / model_filename(instance_id, variant, alpha)
            fixed = fix_scenarios(cache)
            export_model(mdp, alpha, variant, fixed, target)
            stats = model_stats(mdp, alpha, variant, fixed)
            row.update(status="written", message=f"{target} rows={stats.n_rows} vars={stats.n_vars}")
        else:
            raise ValueError(f"unknown method {method!r}")
        value = row["value"]
        if method != "bounds" and not method.startswith("export:"):
            mv = var_of_policy(mdp, self.mv_policy(), alpha).value
            row["pct_vpi"] = _pct(value - cache.b_l, value)
            row["pct_vss"] = _pct(mv - value, mv)
            ev = self.ev_policy()
            if ev is not None:
                e_var = var_of_policy(mdp, ev, alpha).value
                row["pct_evar"] = _pct(e_var - value, e_var)
        return row


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def run_experiment(spec: ExperimentSpec, stream=None) -> list[dict]:
    """Run the grid sequentially and return the report rows, aggregates last.

    Rows are written to ``spec.out`` (CSV) and also to ``stream`` if given.
    """
    rows = []
    export_dir = Path(spec.export_dir) if spec.export_dir else None
    if export_dir:
        export_dir.mkdir(parents=True, exist_ok=True)
    for rep in range(spec.replications):
        try:
            inst_id, mdp = build_instance(spec.source, spec.seed + rep, spec.gamma)
        except Exception as e:  # noqa: BLE001 - reported as an error row
            rows.append({"instance": f"rep{rep}", "method": "load", "status": "error", "message": str(e)})
            continue
        runs = _InstanceRuns(mdp, spec.time_limit)
        for alpha in spec.alphas:
            for method in spec.methods:
                t0 = time.perf_counter()
                try:
                    row = runs.run(method, alpha, export_dir, inst_id)
                except Exception as e:  # noqa: BLE001
                    row = {"status": "error", "message": f"{type(e).__name__}: {e}"}
                row.update(instance=inst_id, n_scenarios=mdp.n_scenarios, n_states=mdp.n_states,
                           n_actions=mdp.n_actions, alpha=alpha, method=method,
                           wall_ms=round(1000.0 * (time.perf_counter() - t0), 3))
                rows.append(row)
    rows.extend(_aggregate(rows, spec))
    _write_report(rows, spec.out, stream)
    return rows


def _aggregate(rows, spec) -> list[dict]:
    out = []
    keys = ("value", "pct_vpi", "pct_vss", "pct_evar", "pct_gap", "nodes", "wall_ms")
    for alpha in spec.alphas:
        for method in spec.methods:
            sel = [r for r in rows if r.get("alpha") == alpha and r.get("method") == method]
            for name, fn in (("mean", np.mean), ("max", np.max)):
                agg = {"instance": name, "alpha": alpha, "method": method, "status": "aggregate",
                       "message": f"{len(sel)} runs"}
                for k in keys:
                    vals = [float(r[k]) for r in sel if r.get(k, "") != "" and not
                            (isinstance(r.get(k), float) and math.isnan(r[k]))]
                    agg[k] = float(fn(vals)) if vals else math.nan
                out.append(agg)
    return out


def _write_report(rows, path, stream) -> None:
    handles = []
    if path:
        handles.append(open(path, "w", newline=""))
    if stream is not None:
        handles.append(stream)
    try:
        for h in handles:
            w = csv.writer(h)
            w.writerow(REPORT_FIELDS)
            for r in rows:
                w.writerow([_fmt(r.get(k, "")) for k in REPORT_FIELDS])
    finally:
        if path:
            handles[0].close()


# ---------------------------------------------------------------- subcommands

def _policy_text(pol) -> str:
    acts = pol.actions
    return " ".join(map(str, acts)) if acts is not None else json.dumps(pol.matrix.tolist())


def cmd_generate(args) -> int:
    if args.config:
        source = json.loads(Path(args.config).read_text())
    else:
        source = {"kind": args.kind}
        if args.kind == "random":
            source.update(n_states=args.states, n_actions=args.actions, n_scenarios=args.scenarios)
    inst_id, mdp = build_instance(source, args.seed, args.gamma)
    out = Path(args.out or f"{inst_id}.json")
    mdp.save(out)
    print(f"wrote {out}: {mdp!r}")
    return 0


def cmd_validate(args) -> int:
    try:
        mdp = _load(args.instance)
    except json.JSONDecodeError as e:
        print(f"ERROR: {args.instance}: line {e.lineno} column {e.colno}: {e.msg}")
        return 1
    except InstanceError as e:
        print(f"ERROR: {args.instance}: {e}")
        return 1
    print(f"OK {mdp!r}")
    sums = mdp.trans.sum(axis=3)
    for s in range(mdp.n_scenarios):
        print(f"  scenario {s}: p={mdp.probs[s]:.6g} row sums in [{sums[s].min():.12g}, {sums[s].max():.12g}] "
              f"cost in [{mdp.cost[s].min():.6g}, {mdp.cost[s].max():.6g}]")
    if args.alpha is not None:
        cache = compute_bounds(mdp, args.alpha)
        print(f"  alpha={args.alpha} b_l={cache.b_l:.10g} b_u={cache.b_u:.10g}")
    return 0


def cmd_bounds(args) -> int:
    mdp = _load(args.instance)
    cache = fix_scenarios(compute_bounds(mdp, args.alpha))
    print(f"b_l={cache.b_l!r} b_u={cache.b_u!r} M={cache.big_m_global!r}")
    print(f"forced out: {list(cache.forced(Fix.FORCED0))} forced in: {list(cache.forced(Fix.FORCED1))}")
    if args.out:
        write_bounds_csv(cache, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_heuristic(args) -> int:
    mdp = _load(args.instance)
    cache = compute_bounds(mdp, args.alpha)
    pol, value, sel = initial_solution(mdp, cache, args.alpha, eps=args.eps, local_search=args.local_search)
    print(f"value={value!r}")
    print(f"selected={list(sel.selected)} mass={sel.selected_prob:.6g}")
    print(f"policy={_policy_text(pol)}")
    return 0


def cmd_solve(args) -> int:
    mdp = _load(args.instance)
    if args.method == "brute":
        res = brute_force(mdp, args.alpha, monotone=args.monotone)
    else:
        cache = fix_scenarios(compute_bounds(mdp, args.alpha))
        res = solve_exact(mdp, args.alpha, cache, monotone=args.monotone, time_limit=args.time_limit)
    print(f"status={res.status} value={res.value!r} nodes={res.nodes} gap={res.gap:.6g} "
          f"time={res.wall_time:.3f}s")
    if res.policy is not None:
        print(f"policy={_policy_text(res.policy)}")
        print(f"cover={list(res.selected)}")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "status": res.status, "value": res.value, "nodes": res.nodes, "gap": res.gap,
            "policy": list(res.policy.actions) if res.policy is not None else None,
            "cover": list(res.selected)}, indent=1) + "\n")
    return 0 if res.status in ("optimal", "time_limit") else 1


def cmd_export(args) -> int:
    mdp = _load(args.instance)
    variant = ModelVariant(Variant(args.variant), uses_cache=not args.basic, global_big_m=args.global_big_m)
    cache = fix_scenarios(compute_bounds(mdp, args.alpha)) if variant.uses_cache else None
    out = Path(args.out) if args.out else Path(".")
    if out.is_dir():
        out = out / model_filename(Path(args.instance).stem, variant, args.alpha)
    path = export_model(mdp, args.alpha, variant, cache, out)
    stats = model_stats(mdp, args.alpha, variant, cache)
    print(f"wrote {path}: {stats.n_rows} rows, {stats.n_vars} variables, {stats.n_binary} binary")
    return 0


def cmd_experiment(args) -> int:
    if args.spec:
        data = json.loads(Path(args.spec).read_text())
    else:
        data = {}
    if args.instance:
        data["source"] = {"kind": "file", "path": args.instance}
    elif args.config:
        data["source"] = json.loads(Path(args.config).read_text())
    data.setdefault("source", {"kind": "inventory"})
    if args.alpha:
        data["alphas"] = args.alpha
    data.setdefault("alphas", [0.9, 0.95, 1.0])
    if args.methods:
        data["methods"] = args.methods.split(",")
    data.setdefault("methods", ["exact", "mv", "alg1"])
    for key in ("replications", "seed", "time_limit", "gamma", "out", "export_dir"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    spec = ExperimentSpec(**data)
    rows = run_experiment(spec, None if spec.out else sys.stdout)
    errors = [r for r in rows if r.get("status") == "error"]
    for r in errors:
        print(f"error: {r.get('instance')} {r.get('method')}: {r.get('message')}", file=sys.stderr)
    return 1 if errors else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmdp", description="Quantile (value-at-risk) MDPs over finite scenario sets")
    sub = p.add_subparsers(dest="command", required=True)

    def instance_arg(sp):
        sp.add_argument("instance", help="instance JSON file")

    def alpha_arg(sp, required=True):
        sp.add_argument("--alpha", type=float, required=required, help="quantile level in (0, 1]")

    g = sub.add_parser("generate", help="build an instance file")
    g.add_argument("--config", help="JSON generator config (kind plus parameters)")
    g.add_argument("--kind", choices=["inventory", "five", "random", "example"], default="inventory")
    g.add_argument("--states", type=int, default=4)
    g.add_argument("--actions", type=int, default=3)
    g.add_argument("--scenarios", type=int, default=8)
    g.add_argument("--seed", type=int)
    g.add_argument("--gamma", type=float)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="check an instance file")
    instance_arg(v)
    alpha_arg(v, required=False)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bounds", help="per-scenario bounds and fixed indicators")
    instance_arg(b)
    alpha_arg(b)
    b.add_argument("--out", help="CSV output")
    b.set_defaults(func=cmd_bounds)

    h = sub.add_parser("heuristic", help="scenario selection and robust value iteration")
    instance_arg(h)
    alpha_arg(h)
    h.add_argument("--eps", type=float, default=DEFAULT_EPS)
    h.add_argument("--local-search", action="store_true")
    h.set_defaults(func=cmd_heuristic)

    s = sub.add_parser("solve", help="minimum-VaR deterministic policy")
    instance_arg(s)
    alpha_arg(s)
    s.add_argument("--method", choices=["exact", "brute"], default="exact")
    s.add_argument("--monotone", action="store_true", help="restrict to nonincreasing action vectors")
    s.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    s.add_argument("--out", help="JSON result file")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("export", help="write an LP model")
    instance_arg(e)
    alpha_arg(e)
    e.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.QMDP_D_BIGM.value)
    e.add_argument("--basic", action="store_true", help="use naive constants instead of computed bounds")
    e.add_argument("--global-big-m", action="store_true", help="one quantile-row constant b_u - b_l")
    e.add_argument("--out", help="file or directory")
    e.set_defaults(func=cmd_export)

    x = sub.add_parser("experiment", help="run a grid and write a CSV report")
    x.add_argument("--spec", help="JSON experiment spec")
    x.add_argument("--instance", help="instance file (instead of a generator)")
    x.add_argument("--config", help="JSON generator config")
    x.add_argument("--alpha", type=float, action="append", help="repeatable")
    x.add_argument("--methods", help="comma list of " + ", ".join(METHODS) + ", export:<variant>")
    x.add_argument("--replications", type=int)
    x.add_argument("--seed", type=int)
    x.add_argument("--time-limit", type=float)
    x.add_argument("--gamma", type=float)
    x.add_argument("--export-dir")
    x.add_argument("--out", help="CSV report (stdout if omitted)")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, ValueError, OSError, SearchSpaceTooLarge) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
