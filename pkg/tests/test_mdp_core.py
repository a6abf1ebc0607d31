import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qmdp.mdp_core import (InstanceError, Policy, ScenarioParams, UncertainMdp, bellman_residual,
                           evaluate_policy, expected_cost, greedy_actions, optimal_value, policy_iteration,
                           random_mdp, randomization_counterexample, scenario_costs, solve_mdp,
                           stopping_threshold)


def _inverse_value(mdp, s, pol):
    # oracle: closed form (I - gamma P)^-1 c via an explicit inverse
    w = pol.matrix
    c = (w * mdp.cost[s]).sum(axis=1)
    p = np.einsum("ia,iaj->ij", w, mdp.trans[s])
    return np.linalg.inv(np.eye(mdp.n_states) - mdp.gamma * p) @ c


def test_scenario_params_rejects_bad_rows():
    trans = np.full((2, 1, 2), 0.5)
    trans[1, 0] = [0.5, 0.48]
    with pytest.raises(InstanceError, match=r"i=1, a=0"):
        ScenarioParams(np.ones((2, 1)), trans)


def test_scenario_params_rejects_negative_cost():
    with pytest.raises(InstanceError, match=r"negative cost at \(i=0, a=1\)"):
        ScenarioParams([[1.0, -1.0]], np.ones((1, 2, 1)))


def test_arrays_are_read_only():
    mdp = randomization_counterexample()
    with pytest.raises(ValueError):
        mdp.cost[0, 0, 0] = 5.0


def test_instance_validation():
    sp = ScenarioParams([[1.0]], np.ones((1, 1, 1)))
    with pytest.raises(InstanceError):
        UncertainMdp(1.0, [1.0], [sp], [1.0])
    with pytest.raises(InstanceError):
        UncertainMdp(0.5, [1.0], [sp, sp], [0.7, 0.4])
    with pytest.raises(InstanceError):
        UncertainMdp(0.5, [0.5], [sp], [1.0])
    with pytest.raises(InstanceError):
        UncertainMdp(0.5, [1.0], [sp, ScenarioParams(np.ones((2, 1)), np.full((2, 1, 2), 0.5))], [0.5, 0.5])


def test_json_round_trip(tmp_path, small_random):
    path = tmp_path / "inst.json"
    small_random.save(path)
    back = UncertainMdp.load(path)
    assert np.array_equal(back.cost, small_random.cost)
    assert np.array_equal(back.trans, small_random.trans)
    assert np.array_equal(back.probs, small_random.probs)
    assert back.gamma == small_random.gamma


def test_load_error_names_scenario(tmp_path, small_random):
    d = small_random.to_dict()
    d["scenarios"][2]["trans"][1][0][0] -= 0.02
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(InstanceError, match=r"s=2.*i=1, a=0"):
        UncertainMdp.load(path)


def test_policy_helpers():
    pol = Policy.deterministic([1, 0, 1], 2)
    assert pol.is_deterministic and pol.actions == (1, 0, 1)
    mixed = Policy([[0.5, 0.5]])
    assert not mixed.is_deterministic and mixed.actions is None
    with pytest.raises(InstanceError):
        Policy([[0.6, 0.6]])
    with pytest.raises(InstanceError):
        Policy.deterministic([2], 2)


def test_example_values():
    mdp = randomization_counterexample(0.99)
    # deterministic policies cost 0 or 2 per period; mixing costs 1 in both scenarios
    assert scenario_costs(mdp, Policy.deterministic([0], 2)) == pytest.approx([0.0, 200.0], abs=1e-9)
    assert scenario_costs(mdp, Policy([[0.5, 0.5]])) == pytest.approx([100.0, 100.0], abs=1e-9)


@given(st.integers(0, 10_000), st.sampled_from(["direct", "iterative"]))
def test_evaluation_matches_inverse(seed, method):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(4, 3, 2, rng, gamma=0.9)
    w = rng.dirichlet(np.ones(3), size=4)
    pol = Policy(w)
    for s in range(2):
        v = evaluate_policy(mdp, s, pol, tol=1e-10, method=method)
        assert np.allclose(v, _inverse_value(mdp, s, pol), atol=1e-8)
        assert bellman_residual(mdp, s, pol, v) < 1e-8


def test_stopping_threshold():
    assert stopping_threshold(1e-6, 0.0) == np.inf
    assert stopping_threshold(1e-6, 0.5) == pytest.approx(1e-6)


def test_gamma_zero_is_immediate_cost():
    mdp = random_mdp(3, 2, 1, 0, gamma=0.0)
    pol = Policy.deterministic([1, 0, 1], 2)
    assert evaluate_policy(mdp, 0, pol) == pytest.approx(mdp.cost[0, [0, 1, 2], [1, 0, 1]])


def test_greedy_tie_break():
    q = np.array([[1.0, 1.0, 2.0], [3.0, 2.0, 2.0 + 1e-14]])
    assert greedy_actions(q, "min").tolist() == [0, 1]
    assert greedy_actions(q, "max").tolist() == [2, 0]
    assert greedy_actions(q, "min", current=np.array([1, 2])).tolist() == [1, 2]


@given(st.integers(0, 10_000), st.sampled_from(["min", "max"]))
def test_optimal_value_matches_enumeration(seed, sense):
    mdp = random_mdp(3, 3, 1, seed, gamma=0.85)
    vals = [expected_cost(mdp, 0, Policy.deterministic(p, 3)) for p in itertools.product(range(3), repeat=3)]
    target = min(vals) if sense == "min" else max(vals)
    v, pol = optimal_value(mdp, 0, sense, tol=1e-10)
    assert float(mdp.q @ v) == pytest.approx(target, abs=1e-9)
    assert expected_cost(mdp, 0, pol) == pytest.approx(target, abs=1e-9)


def test_solve_mdp_respects_mask():
    mdp = random_mdp(3, 3, 1, 3, gamma=0.9)
    allowed = np.array([[True, False, False], [False, True, True], [True, True, True]])
    v, acts = solve_mdp(mdp.cost[0], mdp.trans[0], mdp.gamma, "min", allowed=allowed)
    assert acts[0] == 0 and acts[1] in (1, 2)
    best = min(expected_cost(mdp, 0, Policy.deterministic([0, b, c], 3)) for b in (1, 2) for c in range(3))
    assert float(mdp.q @ v) == pytest.approx(best, abs=1e-9)


def test_policy_iteration_rejects_disallowed_start():
    mdp = random_mdp(2, 2, 1, 0)
    allowed = np.array([[True, False], [True, True]])
    with pytest.raises(ValueError):
        policy_iteration(mdp.cost[0], mdp.trans[0], mdp.gamma, "min", np.array([1, 0]), allowed)


def test_random_mdp_is_reproducible():
    a = random_mdp(3, 2, 4, 11)
    b = random_mdp(3, 2, 4, 11)
    assert np.array_equal(a.cost, b.cost) and np.array_equal(a.trans, b.trans)
