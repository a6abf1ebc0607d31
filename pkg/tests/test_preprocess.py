import csv
import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmdp.exact_solver import brute_force
from qmdp.mdp_core import Policy, random_mdp, randomization_counterexample, scenario_costs
from qmdp.preprocess import (BoundInconsistency, Fix, compute_bounds, fix_scenarios, valid_lb_cut,
                             write_bounds_csv)
from qmdp.quantile import var_alpha


def _all_costs(mdp):
    return np.array([scenario_costs(mdp, Policy.deterministic(p, mdp.n_actions))
                     for p in itertools.product(range(mdp.n_actions), repeat=mdp.n_states)])


def test_example_bounds():
    cache = compute_bounds(randomization_counterexample(0.99), 0.9)
    assert cache.b_l == pytest.approx(0.0, abs=1e-9)
    assert cache.b_u == pytest.approx(200.0, abs=1e-9)
    assert cache.big_m_global == pytest.approx(200.0, abs=1e-9)
    assert cache.big_m_scenario == pytest.approx([200.0, 200.0], abs=1e-9)
    assert cache.z_fixed == (Fix.FREE, Fix.FREE)


@given(st.integers(0, 5000), st.sampled_from([0.5, 0.75, 0.9, 1.0]))
def test_bounds_bracket_every_policy(seed, alpha):
    mdp = random_mdp(3, 2, 5, seed, gamma=0.8)
    cache = compute_bounds(mdp, alpha)
    costs = _all_costs(mdp)  # (policies, scenarios)
    # per-scenario extremes are the enumerated extremes
    assert np.allclose(cache.b_bar, costs.max(axis=0), atol=1e-8)
    assert np.allclose(cache.b_under, costs.min(axis=0), atol=1e-8)
    for row in costs:
        v = var_alpha(row, mdp.probs, alpha).value
        assert cache.b_l - 1e-8 <= v <= cache.b_u + 1e-8
    assert np.all(cache.big_m_state >= 0)


@given(st.integers(0, 5000), st.sampled_from([0.5, 0.75, 0.9]))
def test_fixing_is_consistent_with_optimum(seed, alpha):
    mdp = random_mdp(3, 2, 8, seed, gamma=0.7, cost_scale=10.0)
    cache = fix_scenarios(compute_bounds(mdp, alpha))
    best = brute_force(mdp, alpha)
    for s in cache.forced(Fix.FORCED0):
        assert best.costs[s] > best.value - 1e-9
    for s in cache.forced(Fix.FORCED1):
        assert best.costs[s] <= best.value + 1e-9


def test_forced_one_when_worst_case_is_cheap():
    # scenario 0 always costs less than any other scenario's best
    from conftest import one_state
    mdp = one_state([[0, 1], [5, 6], [7, 8], [9, 9.5]])
    cache = fix_scenarios(compute_bounds(mdp, 0.5))
    assert cache.z_fixed[0] is Fix.FORCED1
    assert cache.z_fixed[3] is Fix.FORCED0


def test_incumbent_tightens_fixing():
    from conftest import one_state
    mdp = one_state([[1, 3], [2, 4], [3, 9], [8, 9]])
    cache = compute_bounds(mdp, 0.5)
    loose = fix_scenarios(cache)
    tight = fix_scenarios(cache, incumbent_ub=2 * 2.0)
    assert len(tight.forced(Fix.FORCED0)) >= len(loose.forced(Fix.FORCED0))
    assert tight.z_fixed[2] is Fix.FORCED0


def test_inconsistency_is_reported():
    cache = compute_bounds(random_mdp(2, 2, 4, 1), 0.75)
    bad = replace(cache, b_u=-1.0)
    with pytest.raises(BoundInconsistency):
        fix_scenarios(bad)


def test_rejects_bad_alpha():
    with pytest.raises(ValueError):
        compute_bounds(random_mdp(2, 2, 2, 0), 0.0)


def test_bounds_csv(tmp_path):
    cache = fix_scenarios(compute_bounds(random_mdp(3, 2, 4, 2), 0.75))
    path = tmp_path / "b.csv"
    write_bounds_csv(cache, path)
    rows = list(csv.DictReader(path.open()))
    assert [r["scenario"] for r in rows] == ["0", "1", "2", "3"]
    assert float(rows[1]["b_bar"]) == cache.b_bar[1]
    assert valid_lb_cut(cache, 1) == cache.b_under[1]
