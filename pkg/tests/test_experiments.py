import csv
import json

import numpy as np
import pytest

from kobmetric.errors import ConfigInvalid
from kobmetric.experiments import (
    EXPERIMENTS,
    ball_distance,
    config_hash,
    load_config,
    run_experiment,
    validate_config,
)

SMALL = {
    "levi-check": {"domains": ["ball", "perturbed-ball(0.05)"], "n_points": 2},
    "chirka": {"n_structures": 2, "n_samples": 500},
    "disc-solve": {"n_structures": 3, "degree": 16},
    "ball-sandwich": {"deltas": [0.1, 0.05], "n": 500},
}


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("name", sorted(SMALL))
def test_small_runs_pass_and_tag_rows(name, tmp_path):
    rep = run_experiment(name, SMALL[name], seed=3, out=str(tmp_path))
    assert rep.passed, rep.summary
    rows = read_rows(tmp_path / f"{name}.csv")
    assert rows and all(r["config_hash"] == rep.config_hash for r in rows)
    summary = json.loads((tmp_path / f"{name}_summary.json").read_text())
    assert summary["config_hash"] == rep.config_hash and summary["passed"]


def test_deterministic_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment("disc-solve", SMALL["disc-solve"], seed=7, out=str(a))
    run_experiment("disc-solve", SMALL["disc-solve"], seed=7, out=str(b), workers=2)
    assert (a / "disc-solve.csv").read_bytes() == (b / "disc-solve.csv").read_bytes()


def test_seed_changes_hash():
    assert run_experiment("chirka", SMALL["chirka"], seed=1).config_hash != \
        run_experiment("chirka", SMALL["chirka"], seed=2).config_hash
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


@pytest.mark.parametrize("name,cfg", [
    ("disc-solve", {"lambda_max": 0.5}),
    ("chirka", {"epsilon": 0.3}),
    ("theorem-a", {"alpha": 0.3, "alpha_prime": 0.25}),
    ("theorem-a", {"domain": "perturbed-ball(0.05)"}),
    ("theorem-a", {"lambdas": [0.2]}),
    ("ball-sandwich", {"deltas": [0.7]}),
    ("gromov", {"source": "nope"}),
    ("gromov", {"n_points": 3}),
    ("levi-check", {"domains": ["perturbed-ball(0.4)"]}),
    ("levi-check", {"bogus": 1}),
    ("nonexistent", {}),
])
def test_invalid_configs(name, cfg):
    with pytest.raises(ConfigInvalid):
        validate_config(name, cfg)


def test_load_config(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("n_structures: 4\nepsilon: 0.05\n")
    assert load_config(str(y)) == {"n_structures": 4, "epsilon": 0.05}
    j = tmp_path / "c.json"
    j.write_text("[1, 2]")
    with pytest.raises(ConfigInvalid):
        load_config(str(j))


def test_theorem_a_ball_ratio_tends_to_one():
    # normal direction in the ball: exact metric 1/(delta (2 - delta)), E = 1/(2 delta)
    rep = run_experiment("theorem-a", {"deltas": [0.1, 0.05, 0.02], "directions": ["normal"]})
    assert rep.passed
    ratios = []
    for r in rep.rows:
        exact = 1 / (r["delta"] * (2 - r["delta"]))
        assert exact * (1 - 1e-9) <= r["upper"] <= exact * 1.005
        ratios.append(r["upper"] / r["E"])
        assert r["lower"] <= r["upper"]
    assert ratios == sorted(ratios, reverse=True)


def test_gromov_collinear_is_tree_like():
    rep = run_experiment("gromov", {"source": "ball-exact"})
    assert rep.passed and rep.summary["delta_hyp"] == pytest.approx(0.0, abs=1e-9)


def test_ball_distance_closed_form():
    a = np.zeros(4)
    b = np.array([0.5, 0, 0, 0])
    assert ball_distance(a, b) == pytest.approx(np.arctanh(0.5))
    assert ball_distance(b, b) == 0


def test_all_experiments_have_defaults():
    for name in EXPERIMENTS:
        assert validate_config(name, {})["seed"] == 0
