import csv
import json
import subprocess
import sys

import pytest

from qmdp.cli import ExperimentSpec, build_instance, main, run_experiment
from qmdp.mdp_core import UncertainMdp, random_mdp, randomization_counterexample


@pytest.fixture
def example_file(tmp_path):
    path = tmp_path / "mix.json"
    randomization_counterexample(0.99).save(path)
    return path


def _rows(path):
    return list(csv.DictReader(open(path)))


def test_generate_and_validate(tmp_path, capsys):
    out = tmp_path / "inv.json"
    assert main(["generate", "--kind", "inventory", "--seed", "2", "--out", str(out)]) == 0
    mdp = UncertainMdp.load(out)
    assert (mdp.n_states, mdp.n_actions) == (6, 5)
    assert main(["validate", str(out), "--alpha", "0.9"]) == 0
    text = capsys.readouterr().out
    assert "OK" in text and "b_l=" in text


def test_generate_from_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "inventory", "capacity_units": 30, "n_vehicles": 2, "n_scenarios": 3}))
    out = tmp_path / "i.json"
    assert main(["generate", "--config", str(cfg), "--gamma", "0.9", "--out", str(out)]) == 0
    mdp = UncertainMdp.load(out)
    assert (mdp.n_scenarios, mdp.n_states, mdp.n_actions, mdp.gamma) == (3, 4, 3, 0.9)


@pytest.mark.parametrize("field,value,pattern", [
    ("trans", 0.98, r"s=1.*i=0, a=1"),
    ("cost", -1.0, r"s=1.*negative cost at \(i=0, a=1\)"),
])
def test_validate_reports_location(tmp_path, capsys, field, value, pattern):
    d = randomization_counterexample().to_dict()
    if field == "trans":
        d["scenarios"][1]["trans"][0][1][0] = value
    else:
        d["scenarios"][1]["cost"][0][1] = value
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    assert main(["validate", str(path)]) == 1
    import re
    assert re.search(pattern, capsys.readouterr().out)


def test_validate_syntax_error(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"gamma": 0.9,\n "q": [1.0,, ]}')
    assert main(["validate", str(path)]) == 1
    assert "line 2" in capsys.readouterr().out


def test_solve_bounds_heuristic_export(example_file, tmp_path, capsys):
    out = tmp_path / "res.json"
    assert main(["solve", str(example_file), "--alpha", "0.9", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["status"] == "optimal" and res["value"] == pytest.approx(200.0)
    assert main(["solve", str(example_file), "--alpha", "0.9", "--method", "brute", "--monotone"]) == 0
    assert main(["bounds", str(example_file), "--alpha", "0.9", "--out", str(tmp_path / "b.csv")]) == 0
    assert len(_rows(tmp_path / "b.csv")) == 2
    assert main(["heuristic", str(example_file), "--alpha", "0.9", "--local-search"]) == 0
    assert "value=" in capsys.readouterr().out
    assert main(["export", str(example_file), "--alpha", "0.9", "--variant", "QMDP_D_McCormick",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "mix_QMDP_D_McCormick_0.9.lp").exists()
    assert main(["export", str(example_file), "--alpha", "0.9", "--basic", "--out", str(tmp_path / "b.lp")]) == 0
    assert "1000000" in (tmp_path / "b.lp").read_text()


def test_missing_file_is_an_error(tmp_path):
    assert main(["solve", str(tmp_path / "nope.json"), "--alpha", "0.9"]) == 2


def test_experiment_example(tmp_path):
    spec = ExperimentSpec(source={"kind": "example"}, alphas=[0.9], methods=["brute", "exact", "alg1", "mv"],
                          out=str(tmp_path / "r.csv"))
    rows = run_experiment(spec)
    runs = [r for r in rows if r["status"] != "aggregate"]
    assert [r["value"] for r in runs] == pytest.approx([200.0] * 4, abs=1e-6)
    file_rows = _rows(tmp_path / "r.csv")
    assert len(file_rows) == 4 + 8
    assert {"mean", "max"} <= {r["instance"] for r in file_rows}


def test_experiment_single_scenario_has_zero_gaps(tmp_path):
    spec = ExperimentSpec(source={"kind": "random", "n_states": 3, "n_actions": 2, "n_scenarios": 1},
                          alphas=[0.7], methods=["exact"])
    (row,) = [r for r in run_experiment(spec) if r["status"] != "aggregate"]
    assert row["pct_vpi"] == 0.0 and row["pct_vss"] == 0.0


def test_experiment_exact_equals_brute(tmp_path):
    spec = ExperimentSpec(source={"kind": "random", "n_states": 4, "n_actions": 3, "n_scenarios": 8},
                          alphas=[0.9], methods=["exact", "brute"], replications=5, seed=10)
    rows = [r for r in run_experiment(spec) if r["status"] != "aggregate"]
    for rep in range(5):
        ex, br = rows[2 * rep], rows[2 * rep + 1]
        assert ex["instance"] == br["instance"]
        assert ex["value"] == pytest.approx(br["value"], abs=1e-6)


def test_experiment_order_independent():
    base = dict(source={"kind": "random", "n_states": 3, "n_actions": 2, "n_scenarios": 4}, alphas=[0.75])
    a = run_experiment(ExperimentSpec(methods=["exact", "mv", "alg1", "bounds"], **base))
    b = run_experiment(ExperimentSpec(methods=["bounds", "alg1", "mv", "exact"], **base))
    val = lambda rows: {r["method"]: r["value"] for r in rows if r["status"] != "aggregate"}
    assert val(a) == val(b)


def test_experiment_reproducible(tmp_path):
    kw = dict(source={"kind": "inventory", "capacity_units": 30, "n_vehicles": 2, "n_scenarios": 3},
              alphas=[0.9, 1.0], methods=["exact", "mv"], replications=2, seed=3)
    drop = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
    a = run_experiment(ExperimentSpec(**kw))
    b = run_experiment(ExperimentSpec(**kw))
    assert drop(a[:8]) == drop(b[:8])


def test_experiment_time_limit_and_errors(tmp_path, example_file):
    spec = ExperimentSpec(source={"kind": "random", "n_states": 6, "n_actions": 3, "n_scenarios": 6},
                          alphas=[0.75], methods=["exact"], time_limit=0.0)
    (row,) = [r for r in run_experiment(spec) if r["status"] != "aggregate"]
    assert row["status"] == "time_limit"
    # brute force refuses 2^21 policies: an error row and a nonzero exit code
    big = tmp_path / "big.json"
    random_mdp(21, 2, 1, 0).save(big)
    out = tmp_path / "r.csv"
    code = main(["experiment", "--instance", str(big), "--alpha", "0.5", "--methods", "brute,mv",
                 "--out", str(out)])
    assert code == 1
    statuses = [r["status"] for r in _rows(out)]
    assert "error" in statuses and "ok" in statuses
    code = main(["experiment", "--instance", str(example_file), "--alpha", "0.9", "--methods",
                 "exact,bounds,export:QMDP_D_bigM", "--export-dir", str(tmp_path / "lp"), "--out", str(out)])
    assert code == 0
    assert (tmp_path / "lp" / "mix_QMDP_D_bigM_0.9.lp").exists()


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentSpec(source={}, alphas=[0.9], methods=[])
    with pytest.raises(ValueError):
        ExperimentSpec(source={}, alphas=[1.2], methods=["exact"])
    with pytest.raises(ValueError):
        ExperimentSpec(source={}, alphas=[0.9], methods=["export:nonsense"])
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"source": {"kind": "example"}, "alphas": [0.9], "methods": ["exact"]}))
    assert ExperimentSpec.load(path).methods == ["exact"]
    with pytest.raises(ValueError):
        build_instance({"kind": "unknown"})


def test_module_entry_point(example_file):
    proc = subprocess.run([sys.executable, "-m", "qmdp", "solve", str(example_file), "--alpha", "0.9"],
                          capture_output=True, text=True, check=True)
    assert "status=optimal" in proc.stdout
