import json
import subprocess
import sys

import numpy as np
import pytest

from kobmetric.cli import main


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_levi_ball(capsys):
    code, out = run(["levi", "--point", "1,0,0,0", "--vector", "0,0,1,0"], capsys)
    assert code == 0
    assert json.loads(out.out)["levi_form"] == pytest.approx(4.0)


def test_kobayashi_ball(capsys, tmp_path):
    code, out = run(["kobayashi", "--point", "0.95,0,0,0", "--vector", "1,0,0,0", "--out", str(tmp_path)],
                    capsys)
    d = json.loads(out.out)
    assert code == 0
    assert d["lower"] <= d["upper"] and d["E"] == pytest.approx(10.0)
    assert (tmp_path / "kobayashi.json").exists()


def test_solve_disc(capsys):
    code, out = run(["solve-disc", "--domain", "perturbed-ball(0.05)", "--w", "0.1,0,0.05,0"], capsys)
    assert code == 0
    assert json.loads(out.out)["residual"] <= 1e-6


def test_gromov_delta_csv(capsys, tmp_path):
    x = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
    D = np.linalg.norm(x[:, None] - x[None], axis=-1)
    path = tmp_path / "d.csv"
    with open(path, "w") as fh:
        fh.write(",a,b,c,d\n")
        for lab, row in zip("abcd", D):
            fh.write(lab + "," + ",".join(repr(float(v)) for v in row) + "\n")
    code, out = run(["gromov-delta", str(path)], capsys)
    assert code == 0 and json.loads(out.out)["delta_hyp"] == pytest.approx(np.sqrt(2) - 1)


def test_config_errors_exit_2(capsys, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("lambda_max: 0.5\n")
    code, out = run(["experiment", "disc-solve", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "lambda_max" in out.err
    code, _ = run(["levi", "--domain", "torus", "--point", "1,0,0,0", "--vector", "0,0,1,0"], capsys)
    assert code == 2
    code, _ = run(["gromov-delta", str(tmp_path / "missing.csv")], capsys)
    assert code == 2


def test_experiment_verb_writes_tables(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_structures": 2, "degree": 16}))
    code, out = run(["experiment", "disc-solve", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path)],
                    capsys)
    assert code == 0 and "disc-solve: PASS" in out.out
    assert (tmp_path / "disc-solve.csv").exists()


def test_bad_vector_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["levi", "--point", "1,0,0", "--vector", "0,0,1,0"])
    assert exc.value.code == 2


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "kobmetric.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "experiment" in res.stdout
