import json
import os

import pytest

from dynequiv.cli import main

TINY = dict(
    network="two_machine", feature_branches=[3], train_buses=[4],
    t_end=0.6, h=0.004, t_fault=0.1, train_window=0.4,
    train_clearing=[0.14, 0.2], test_clearing=[0.14, 0.2],
    n_train=2, n_test=2, hidden=[6], pretrain_epochs=4, epochs=3, seed=3)


@pytest.fixture()
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def last_stdout_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def test_missing_subcommand_is_config_error(capsys):
    assert main([]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config"


def test_unknown_mode_is_config_error(cfg_path, tmp_path, capsys):
    rc = main(["train", "--config", cfg_path, "--mode", "banana",
               "--out", str(tmp_path / "o")])
    assert rc == 1


def test_missing_config_file(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "x.csv")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config"


def test_malformed_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["simulate", "--config", str(bad), "--out",
               str(tmp_path / "x.csv")])
    assert rc == 1


def test_simulate_writes_csv(cfg_path, tmp_path, capsys):
    out = str(tmp_path / "ref.csv")
    rc = main(["simulate", "--config", cfg_path, "--out", out])
    assert rc == 0
    assert os.path.exists(out)
    summary = last_stdout_json(capsys)
    assert summary["bus"] == 4
    assert summary["n_samples"] > 0


def test_gen_data_writes_splits(cfg_path, tmp_path, capsys):
    out = str(tmp_path / "data")
    rc = main(["gen-data", "--config", cfg_path, "--out", out])
    assert rc == 0
    summary = last_stdout_json(capsys)
    assert summary["n_train"] == 2
    assert os.path.exists(os.path.join(out, "train", "manifest.json"))
    assert os.path.exists(os.path.join(out, "test_seen", "scenario_2.csv"))


def test_train_then_evaluate_round_trip(cfg_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    rc = main(["train", "--config", cfg_path, "--mode", "open", "--out", out,
               "--verbose"])
    assert rc == 0
    captured = capsys.readouterr()
    summary = json.loads(captured.out.strip().splitlines()[-1])
    assert summary["mode"] == "open"
    assert os.path.exists(os.path.join(out, "model.json"))
    # verbose progress lines are one-line JSON on stderr
    prog = [json.loads(line) for line in captured.err.strip().splitlines()]
    assert any("loss" in p for p in prog)

    rc = main(["evaluate", "--config", cfg_path, "--model",
               os.path.join(out, "model.json"), "--mode", "open",
               "--out", out, "--no-csv"])
    assert rc == 0
    summary = last_stdout_json(capsys)
    assert "test_seen" in summary
    assert os.path.exists(os.path.join(out, "report.json"))
    assert not os.path.exists(os.path.join(out, "eval_train"))


def test_estimate_jacobian(cfg_path, tmp_path, capsys):
    out = str(tmp_path / "jac.json")
    rc = main(["estimate-jacobian", "--config", cfg_path, "--out", out])
    assert rc == 0
    summary = last_stdout_json(capsys)
    assert summary["rows"] == 2
    assert os.path.exists(out)


def test_gradcheck_pass_and_fail(cfg_path, tmp_path, capsys):
    rc = main(["gradcheck", "--config", cfg_path, "--n-coords", "4",
               "--tol", "1e-3", "--out", str(tmp_path / "gc.json")])
    assert rc == 0
    summary = last_stdout_json(capsys)
    assert summary["max_rel_err"] < 1e-3
    assert os.path.exists(str(tmp_path / "gc.json"))

    rc = main(["gradcheck", "--config", cfg_path, "--n-coords", "4",
               "--tol", "1e-30"])
    assert rc == 2
    captured = capsys.readouterr()
    err = json.loads(captured.err.strip().splitlines()[-1])
    assert err["error"] == "numerical"
    # the measured summary still lands on stdout before the failure
    assert "max_rel_err" in json.loads(captured.out.strip().splitlines()[-1])


def test_seed_override_changes_scenarios(cfg_path, tmp_path):
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    assert main(["gen-data", "--config", cfg_path, "--out", out1,
                 "--seed", "1"]) == 0
    assert main(["gen-data", "--config", cfg_path, "--out", out2,
                 "--seed", "2"]) == 0
    m1 = json.load(open(os.path.join(out1, "train", "manifest.json")))
    m2 = json.load(open(os.path.join(out2, "train", "manifest.json")))
    c1 = [s["t_clear"] for s in m1["scenarios"]]
    c2 = [s["t_clear"] for s in m2["scenarios"]]
    assert c1 != c2
