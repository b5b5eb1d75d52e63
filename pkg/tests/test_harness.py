import dataclasses
import json
import os

import numpy as np
import pytest

from dynequiv.errors import ConfigError
from dynequiv.grid import FaultScenario
from dynequiv.harness import (EvaluationReport, ExperimentConfig,
                              ScenarioResult, build_dataset, config_from_dict,
                              config_to_dict, generate_scenarios, load_config,
                              load_dataset, read_history, relative_error_series,
                              resolve_network, run_evaluation, run_training,
                              save_dataset, simulate_reference, stage_schedule,
                              write_history)
from dynequiv.integrators import TimeGrid
from dynequiv.mlp import load_model

TINY = dict(
    network="two_machine", feature_branches=[3], train_buses=[4],
    t_end=0.6, h=0.004, t_fault=0.1, train_window=0.4,
    train_clearing=[0.14, 0.2], test_clearing=[0.14, 0.2],
    n_train=2, n_test=2, hidden=[6], pretrain_epochs=4, epochs=3, seed=3)


def tiny_config(**over):
    data = dict(TINY)
    data.update(over)
    return config_from_dict(data)


def test_unknown_config_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict(dict(TINY, typo_field=1))


@pytest.mark.parametrize("bad", [
    dict(t_end=-1.0), dict(h=0.0), dict(train_clearing=[0.3, 0.2]),
    dict(train_window=5.0), dict(n_train=0), dict(t_fault=0.7),
    dict(load_scale=[1.2, 0.8]), dict(train_buses=[]),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        tiny_config(**bad)


def test_config_round_trip(tmp_path):
    cfg = tiny_config()
    data = config_to_dict(cfg)
    assert config_from_dict(data) == cfg
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    assert load_config(str(path)) == cfg


def test_resolve_network_builtins_and_partition_override():
    cfg = tiny_config()
    net = resolve_network(cfg)
    assert net.partition is not None
    cfg9 = config_from_dict(dict(
        TINY, network="ieee9", feature_branches=[9, 11], train_buses=[6],
        internal_buses=[3, 6, 8, 9, 103], tie_branches=[7, 10]))
    net9 = resolve_network(cfg9)
    assert set(net9.partition.internal) == {3, 6, 8, 9, 103}
    with pytest.raises(ConfigError):
        resolve_network(config_from_dict(dict(TINY, network="no_such_grid")))


def test_scenarios_deterministic_and_disjoint():
    cfg = config_from_dict(dict(
        TINY, network="ieee9", feature_branches=[9, 11], train_buses=[6, 9],
        test_unseen_buses=[8], n_train=6, n_test=6))
    a = generate_scenarios(cfg)
    b = generate_scenarios(cfg)
    assert a == b
    assert len(a["train"]) == 6
    assert len(a["test_seen"]) == 3
    assert len(a["test_unseen"]) == 3
    assert {s.bus for s in a["train"]} == {6, 9}
    assert {s.bus for s in a["test_unseen"]} == {8}
    keys = [(s.bus, s.t_clear) for split in a.values() for s in split]
    assert len(keys) == len(set(keys))
    grid = cfg.grid()
    for split in a.values():
        for s in split:
            assert cfg.train_clearing[0] - 1e-9 <= s.t_clear <= cfg.train_clearing[1] + 1e-9
            assert s.t_clear >= cfg.t_fault + 2 * grid.h - 1e-12
            # clearing snapped onto the step grid
            assert abs(s.t_clear / grid.h - round(s.t_clear / grid.h)) < 1e-9


def test_scenario_ids_are_sequential():
    cfg = tiny_config()
    scen = generate_scenarios(cfg)
    ids = [s.id for split in ("train", "test_seen", "test_unseen")
           for s in scen[split]]
    assert ids == list(range(len(ids)))


def test_stage_schedule():
    grid = TimeGrid(0.0, 0.1, 0.01)
    scen = (FaultScenario(id=0, bus=4, t_fault=0.03, t_clear=0.06),)
    stages = stage_schedule(grid, scen)
    assert stages.shape == (1, 10)
    assert stages.tolist()[0] == [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    none_bus = (dataclasses.replace(scen[0], bus=None),)
    assert not stage_schedule(grid, none_bus).any()


def test_build_dataset_shapes_and_start(tm_data):
    net, dataset, insys = tm_data
    n = dataset.grid.n_steps
    b = dataset.n_scenarios
    assert dataset.x_ex_hat.shape == (b, n + 1, 2 * insys.n_ties)
    assert dataset.x_in_hat.shape == (b, n + 1, 2 * insys.n_machines)
    assert dataset.s_hat.shape == (b, n + 1, insys.n_features)
    assert np.allclose(dataset.x_in_hat[:, 0], dataset.eq_x_in, atol=1e-8)
    assert np.allclose(dataset.x_ex_hat[:, 0], dataset.eq_x_ex, atol=1e-8)
    assert np.all(dataset.x_ex_scale > 0) and np.all(dataset.x_in_scale > 0)


def test_dataset_round_trip_is_exact(tmp_path, tm_data):
    net, dataset, _ = tm_data
    d = str(tmp_path / "ds")
    save_dataset(d, dataset, net, (3,))
    loaded, net2, branches = load_dataset(d)
    assert branches == (3,)
    for field in ("x_ex_hat", "x_in_hat", "s_hat", "eq_x_ex", "eq_x_in",
                  "eq_s", "alpha", "x_ex_scale", "x_in_scale"):
        assert np.array_equal(getattr(loaded, field), getattr(dataset, field)), field
    assert np.array_equal(loaded.stage_of_step, dataset.stage_of_step)
    assert loaded.scenarios == dataset.scenarios
    assert loaded.grid == dataset.grid

    d2 = str(tmp_path / "ds2")
    save_dataset(d2, loaded, net2, branches)
    for name in sorted(os.listdir(d)):
        with open(os.path.join(d, name)) as fa, open(os.path.join(d2, name)) as fb:
            assert fa.read() == fb.read(), name


def test_relative_error_series_definition():
    x_hat = np.zeros((1, 4, 2))
    x_hat[0, :, 0] = [0.0, 2.0, -4.0, 1.0]
    x_hat[0, :, 1] = [1.0, 1.0, 1.0, 1.0]
    x = x_hat.copy()
    x[0, 2, 0] += 1.0
    x[0, 3, 1] -= 0.5
    err = relative_error_series(x, x_hat)
    assert err.shape == x.shape
    assert np.isclose(err[0, 2, 0], 1.0 / (4.0 + 1e-6))
    assert np.isclose(err[0, 3, 1], 0.5 / (1.0 + 1e-6))
    assert err[0, 0, 0] == 0.0


def test_report_aggregation():
    def scen(i):
        return FaultScenario(id=i, bus=4, t_fault=0.1, t_clear=0.2)

    results = tuple(
        ScenarioResult(scenario=scen(i), diverged=(i == 3),
                       mean_err={"tie": v, "freq": v / 2, "voltage": v / 4},
                       max_err={"tie": 2 * v, "freq": v, "voltage": v / 2})
        for i, v in enumerate([0.1, 0.2, 0.3, 9.9]))
    rep = EvaluationReport(split="test_seen", results=results)
    assert rep.n_diverged == 1
    assert np.allclose(rep.group_values("tie"), [0.1, 0.2, 0.3])
    agg = rep.aggregate()
    assert agg["n_scenarios"] == 4 and agg["n_diverged"] == 1
    assert np.isclose(agg["tie"]["mean_of_means"], 0.2)
    assert np.isclose(agg["tie"]["median"], 0.2)
    assert np.isclose(agg["freq"]["max_of_means"], 0.15)

    dead = EvaluationReport(split="x", results=tuple(
        dataclasses.replace(r, diverged=True) for r in results))
    assert dead.aggregate()["tie"] is None


def test_history_round_trip(tmp_path):
    hist = [(0, 1.5, 2.25), (1, 0.3333333333333333, 1e-16)]
    path = str(tmp_path / "h.csv")
    write_history(path, hist)
    again = read_history(path)
    assert again == hist
    write_history(str(tmp_path / "h2.csv"), again)
    assert open(path).read() == open(str(tmp_path / "h2.csv")).read()


def test_run_training_and_evaluation_artifacts(tmp_path):
    cfg = tiny_config()
    out = str(tmp_path / "run")
    summary = run_training(cfg, mode="open", out_dir=out)
    assert summary["mode"] == "open"
    assert os.path.exists(os.path.join(out, "model.json"))
    assert os.path.exists(os.path.join(out, "loss_history.csv"))

    model = load_model(os.path.join(out, "model.json"))
    report = run_evaluation(cfg, model, mode="open", out_dir=out,
                            splits=("train", "test_seen"))
    assert set(report["splits"]) == {"train", "test_seen"}
    with open(os.path.join(out, "report.json")) as f:
        on_disk = json.load(f)
    assert on_disk["mode"] == "open"
    assert os.path.exists(os.path.join(out, "eval_train"))
    csvs = os.listdir(os.path.join(out, "eval_train"))
    assert len(csvs) == cfg.n_train


def test_simulate_reference_writes_csv(tmp_path):
    cfg = tiny_config()
    path = str(tmp_path / "ref.csv")
    info = simulate_reference(cfg, out_path=path)
    assert os.path.exists(path)
    header = open(path).readline()
    assert header.startswith("t,")
    assert info["bus"] in cfg.train_buses
