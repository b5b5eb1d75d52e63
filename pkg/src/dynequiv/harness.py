"""Experiment harness.

Everything an end-to-end run needs: deterministic scenario sampling from a
JSON config, reference-trajectory generation on the full grid, dataset
persistence (one CSV per scenario plus a manifest), the training drivers
for the four surrogate modes, closed-loop evaluation with per-group error
statistics, and the finite-difference gradient check.

Determinism contract: every random draw flows from `seed` through named
substreams (np.random.default_rng([seed, k])), all floats are written with
round-trip formatting, and JSON is dumped with sorted keys, so a rerun with
the same config is bit-identical.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from .baseline import (one_step_error, prepare_discrete_model,
                       simulate_alternating, train_discrete)
from .errors import ConfigError, DataError
from .estimation import (JacobianEstimate, connectivity_mask,
                         pg_estimate_jacobian, save_estimate)
from .fileio import read_json, write_json
from .grid import (FaultScenario, NetworkModel, Partition, ieee9,
                   initialize_operating_point, load_network, two_area,
                   two_machine, validate_network)
from .hybrid import TrainingSet, simulate_closed_loop, split_hybrid, adjoint_gradient
from .integrators import TimeGrid, integrate_stages
from .mlp import Mlp, save_model
from .physics import (InternalSystem, build_full_system,
                      build_internal_system, stack_full_systems,
                      stack_internal_systems)
from .training import (TrainResult, deviation_scales, prepare_model,
                       train_open_loop, train_pg, train_pi)

log = logging.getLogger(__name__)

BUILTIN_NETWORKS = {"two_machine": two_machine, "ieee9": ieee9,
                    "two_area": two_area}
MODES = ("open", "pi", "pg", "dnn")
DATASET_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1
METRIC_EPS = 1e-6
MONITOR_GROUPS = ("tie", "freq", "voltage")


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: network, scenario sampling, model and budgets.

    Clearing times are absolute simulation times (the fault starts at
    t_fault). internal_buses/tie_branches override the network's stored
    partition; both must be given together and must list every internal
    bus id including machine nodes.
    """

    network: str
    train_buses: tuple[int, ...]
    test_unseen_buses: tuple[int, ...] = ()
    test_seen_buses: tuple[int, ...] = ()      # defaults to train_buses
    feature_branches: tuple[int, ...] = ()
    internal_buses: tuple[int, ...] | None = None
    tie_branches: tuple[int, ...] | None = None
    t_end: float = 10.0
    h: float = 0.005
    t_fault: float = 0.1
    train_window: float = 5.0
    train_clearing: tuple[float, float] = (0.14, 0.26)
    test_clearing: tuple[float, float] = (0.14, 0.26)
    n_train: int = 10
    n_test: int = 20
    load_scale: tuple[float, float] = (1.0, 1.0)
    test_load_scale: float | None = None
    hidden: tuple[int, ...] = (64, 64)
    dnn_hidden: tuple[int, ...] = (64, 64, 64)
    pretrain_epochs: int = 250
    epochs: int = 150
    pretrain_lr: float = 1e-3
    lr: float = 3e-4
    dnn_schedule: tuple[tuple[float, int], ...] = (
        (3e-3, 1000), (1e-3, 1000), (3e-4, 1000), (1e-4, 800), (3e-5, 600))
    dnn_batch: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.train_buses:
            raise ConfigError("train_buses must not be empty")
        if not (self.h > 0.0 and self.t_end > 0.0):
            raise ConfigError("t_end and h must be positive")
        for name in ("train_clearing", "test_clearing"):
            lo, hi = getattr(self, name)
            if not (self.t_fault < lo <= hi):
                raise ConfigError(f"{name} must satisfy t_fault < lo <= hi")
        lo, hi = self.load_scale
        if not lo <= hi:
            raise ConfigError("load_scale range must be ordered")
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("scenario counts must be positive")
        if not 0 < self.train_window <= self.t_end:
            raise ConfigError("train_window must lie in (0, t_end]")
        if (self.internal_buses is None) != (self.tie_branches is None):
            raise ConfigError(
                "partition override needs both internal_buses and tie_branches")

    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.t_end, self.h)


_TUPLE_FIELDS = {"train_buses", "test_unseen_buses", "test_seen_buses",
                 "feature_branches", "internal_buses", "tie_branches",
                 "train_clearing", "test_clearing", "load_scale", "hidden",
                 "dnn_hidden"}


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "network" not in data or "train_buses" not in data:
        raise ConfigError("config needs at least 'network' and 'train_buses'")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        if key == "dnn_schedule":
            value = tuple((float(lr), int(ep)) for lr, ep in value)
        kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path: str) -> ExperimentConfig:
    return config_from_dict(read_json(path))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["dnn_schedule"] = [[lr, ep] for lr, ep in cfg.dnn_schedule]
    for key in _TUPLE_FIELDS:
        if out[key] is not None:
            out[key] = list(out[key])
    return out


def resolve_network(cfg: ExperimentConfig) -> NetworkModel:
    if cfg.network in BUILTIN_NETWORKS:
        net = BUILTIN_NETWORKS[cfg.network]()
    elif os.path.exists(cfg.network):
        net = load_network(cfg.network)
    else:
        raise ConfigError(f"unknown network {cfg.network!r} (not a builtin, "
                          f"not a readable path)")
    if cfg.internal_buses is not None:
        ids = {b.id for b in net.buses}
        external = tuple(sorted(ids - set(cfg.internal_buses)))
        net = dataclasses.replace(net, partition=Partition(
            internal=tuple(cfg.internal_buses), external=external,
            tie_branches=tuple(cfg.tie_branches)))
        validate_network(net)
    return net


# --- scenario sampling ------------------------------------------------------

def _sample_split(cfg: ExperimentConfig, buses, clearing, count, alpha_fixed,
                  stream: int, used: set, first_id: int) -> tuple[FaultScenario, ...]:
    rng = np.random.default_rng([cfg.seed, stream])
    grid = cfg.grid()
    lo, hi = clearing
    floor = grid.snap(cfg.t_fault) + 2 * cfg.h
    out = []
    for i in range(count):
        bus = int(buses[i % len(buses)])
        for _ in range(500):
            t_clear = max(grid.snap(rng.uniform(lo, hi)), floor)
            if (bus, t_clear) not in used:
                break
        else:
            raise ConfigError(
                "could not draw disjoint (bus, clearing) scenarios; widen the "
                "clearing range or reduce the scenario count")
        used.add((bus, t_clear))
        a_lo, a_hi = cfg.load_scale
        if alpha_fixed is not None:
            alpha = float(alpha_fixed)
        elif a_lo == a_hi:
            alpha = a_lo
        else:
            alpha = float(rng.uniform(a_lo, a_hi))
        out.append(FaultScenario(id=first_id + i, bus=bus,
                                 t_fault=grid.snap(cfg.t_fault),
                                 t_clear=t_clear, alpha=alpha))
    return tuple(out)


def generate_scenarios(cfg: ExperimentConfig) -> dict[str, tuple[FaultScenario, ...]]:
    """Deterministic train/test split.

    Test scenarios split between trained ("seen") fault buses with fresh
    clearing times and buses never faulted in training; (bus, clearing)
    pairs are disjoint across the whole collection. With no unseen buses
    configured all test scenarios fall in the seen group, and vice versa.
    """
    used: set = set()
    seen_buses = cfg.test_seen_buses or cfg.train_buses
    n_seen = cfg.n_test // 2 if cfg.test_unseen_buses else cfg.n_test
    n_unseen = cfg.n_test - n_seen
    train = _sample_split(cfg, cfg.train_buses, cfg.train_clearing,
                          cfg.n_train, None, 0, used, 0)
    seen = _sample_split(cfg, seen_buses, cfg.test_clearing, n_seen,
                         cfg.test_load_scale, 1, used, cfg.n_train)
    unseen = _sample_split(cfg, cfg.test_unseen_buses or (0,),
                           cfg.test_clearing, n_unseen,
                           cfg.test_load_scale, 2, used, cfg.n_train + n_seen)
    return {"train": train, "test_seen": seen, "test_unseen": unseen}


# --- reference data ---------------------------------------------------------

def stage_schedule(grid: TimeGrid, scenarios) -> np.ndarray:
    """Per-scenario stage of each integration step (0 pre, 1 fault, 2 post)."""
    step_t = grid.times()[:-1]
    stages = np.zeros((len(scenarios), grid.n_steps), dtype=int)
    for k, sc in enumerate(scenarios):
        if sc.bus is None:
            continue
        stages[k, (step_t >= sc.t_fault) & (step_t < sc.t_clear)] = 1
        stages[k, step_t >= sc.t_clear] = 2
    return stages


def build_systems(net: NetworkModel, scenarios, feature_branches):
    """Stacked full and internal systems for a scenario batch."""
    fss, inss = [], []
    for sc in scenarios:
        op = initialize_operating_point(net, alpha=sc.alpha)
        fss.append(build_full_system(net, op, fault_bus=sc.bus,
                                     feature_branches=feature_branches))
        inss.append(build_internal_system(net, op, fault_bus=sc.bus,
                                          feature_branches=feature_branches))
    return stack_full_systems(fss), stack_internal_systems(inss)


def build_dataset(net: NetworkModel, scenarios, grid: TimeGrid,
                  feature_branches) -> tuple[TrainingSet, InternalSystem]:
    """Reference trajectories for a scenario batch, measured on the grid."""
    if not scenarios:
        raise ConfigError("cannot build a dataset from zero scenarios")
    fs_b, insys_b = build_systems(net, scenarios, feature_branches)
    stages = stage_schedule(grid, scenarios)
    traj, alive = integrate_stages(lambda x, t, s: fs_b.rhs(x, s), fs_b.x0(),
                                   grid, stages, mask_failures=True)
    if not np.all(alive):
        dead = [sc.id for sc, ok in zip(scenarios, alive) if not ok]
        raise DataError(f"reference simulation lost scenarios {dead}; the "
                        f"configured faults are too severe for this network")
    sample_stage = np.concatenate([stages, stages[:, -1:]], axis=1)
    x_ex_hat, s_hat = fs_b.measure(traj, sample_stage)
    x_in_hat = fs_b.internal_state(traj)
    eq_x_ex, eq_s = fs_b.measure(fs_b.x0(), 0)
    eq_x_in = fs_b.internal_state(fs_b.x0())
    dataset = TrainingSet(
        grid=grid, stage_of_step=stages,
        x_ex_hat=x_ex_hat, x_in_hat=x_in_hat, s_hat=s_hat,
        eq_x_ex=eq_x_ex, eq_x_in=eq_x_in, eq_s=eq_s,
        alpha=np.array([sc.alpha for sc in scenarios]),
        scenarios=tuple(scenarios),
        x_ex_scale=deviation_scales(x_ex_hat, eq_x_ex),
        x_in_scale=deviation_scales(x_in_hat, eq_x_in),
    )
    return dataset, insys_b


# --- dataset persistence ----------------------------------------------------

def _write_csv(path: str, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack(columns)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def _read_csv(path: str) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def save_dataset(dirpath: str, dataset: TrainingSet, net: NetworkModel,
                 feature_branches) -> None:
    """One CSV per scenario plus a manifest that embeds the network.

    Floats are written with 17 significant digits, so a load followed by a
    save reproduces the files bit for bit.
    """
    os.makedirs(dirpath, exist_ok=True)
    from .grid import network_to_dict
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "network": network_to_dict(net),
        "feature_branches": list(feature_branches),
        "grid": {"t0": dataset.grid.t0, "tn": dataset.grid.tn, "h": dataset.grid.h},
        "scenarios": [{"id": sc.id, "bus": sc.bus, "t_fault": sc.t_fault,
                       "t_clear": sc.t_clear, "alpha": sc.alpha}
                      for sc in dataset.scenarios],
        "eq_x_ex": dataset.eq_x_ex.tolist(),
        "eq_x_in": dataset.eq_x_in.tolist(),
        "eq_s": dataset.eq_s.tolist(),
        "x_ex_scale": dataset.x_ex_scale.tolist(),
        "x_in_scale": dataset.x_in_scale.tolist(),
    }
    write_json(os.path.join(dirpath, "manifest.json"), manifest)
    times = dataset.grid.times()
    stages = dataset.stage_of_step
    sample_stage = np.concatenate([stages, stages[:, -1:]], axis=1)
    header = (["t", "stage"]
              + [f"x_in_{i}" for i in range(dataset.dim_in)]
              + [f"x_ex_{i}" for i in range(dataset.dim_ex)]
              + [f"s_{i}" for i in range(dataset.dim_s)])
    for k, sc in enumerate(dataset.scenarios):
        cols = [times, sample_stage[k].astype(float)]
        cols += [dataset.x_in_hat[k, :, i] for i in range(dataset.dim_in)]
        cols += [dataset.x_ex_hat[k, :, i] for i in range(dataset.dim_ex)]
        cols += [dataset.s_hat[k, :, i] for i in range(dataset.dim_s)]
        _write_csv(os.path.join(dirpath, f"scenario_{sc.id}.csv"), header, cols)


def load_dataset(dirpath: str) -> tuple[TrainingSet, NetworkModel, tuple[int, ...]]:
    from .grid import network_from_dict
    manifest = read_json(os.path.join(dirpath, "manifest.json"))
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(f"unsupported dataset format "
                        f"{manifest.get('format_version')!r}")
    net = network_from_dict(manifest["network"])
    grid = TimeGrid(**manifest["grid"])
    scenarios = tuple(FaultScenario(**s) for s in manifest["scenarios"])
    d_in = len(manifest["eq_x_in"][0])
    d_ex = len(manifest["eq_x_ex"][0])
    x_in, x_ex, s_all, stages = [], [], [], []
    for sc in scenarios:
        header, data = _read_csv(os.path.join(dirpath, f"scenario_{sc.id}.csv"))
        if data.shape[0] != grid.n_steps + 1:
            raise DataError(f"scenario {sc.id}: expected {grid.n_steps + 1} "
                            f"rows, found {data.shape[0]}")
        stages.append(data[:-1, 1].astype(int))
        x_in.append(data[:, 2:2 + d_in])
        x_ex.append(data[:, 2 + d_in:2 + d_in + d_ex])
        s_all.append(data[:, 2 + d_in + d_ex:])
    dataset = TrainingSet(
        grid=grid, stage_of_step=np.stack(stages),
        x_ex_hat=np.stack(x_ex), x_in_hat=np.stack(x_in), s_hat=np.stack(s_all),
        eq_x_ex=np.array(manifest["eq_x_ex"]),
        eq_x_in=np.array(manifest["eq_x_in"]),
        eq_s=np.array(manifest["eq_s"]),
        alpha=np.array([sc.alpha for sc in scenarios]),
        scenarios=scenarios,
        x_ex_scale=np.array(manifest["x_ex_scale"]),
        x_in_scale=np.array(manifest["x_in_scale"]),
    )
    return dataset, net, tuple(manifest["feature_branches"])


# --- metrics and evaluation -------------------------------------------------

def relative_error_series(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """|x - x_hat| normalized by the reference peak magnitude per channel.

    The denominator is max over time of |x_hat| (plus a small floor), taken
    separately per scenario and channel, so a channel that barely moves
    does not produce spurious blow-ups.
    """
    denom = np.abs(x_hat).max(axis=-2, keepdims=True) + METRIC_EPS
    return np.abs(x - x_hat) / denom


def monitored_series(insys: InternalSystem, dataset: TrainingSet,
                     x_in: np.ndarray, x_ex: np.ndarray) -> dict[str, np.ndarray]:
    """Tie currents, internal speed deviations, boundary voltage magnitudes."""
    m = insys.n_machines
    stages = dataset.stage_of_step
    sample_stage = np.concatenate([stages, stages[:, -1:]], axis=1)
    volt = np.abs(insys.boundary_voltages(x_in, x_ex, sample_stage))
    return {"tie": x_ex, "freq": x_in[..., m:2 * m], "voltage": volt}


@dataclass(frozen=True)
class ScenarioResult:
    scenario: FaultScenario
    diverged: bool
    mean_err: dict
    max_err: dict


@dataclass(frozen=True)
class EvaluationReport:
    split: str
    results: tuple[ScenarioResult, ...]

    @property
    def n_diverged(self) -> int:
        return sum(r.diverged for r in self.results)

    def group_values(self, group: str, kind: str = "mean") -> np.ndarray:
        """Per-scenario statistics of one monitored group (finite runs only)."""
        vals = [r.mean_err[group] if kind == "mean" else r.max_err[group]
                for r in self.results if not r.diverged]
        return np.array(vals)

    def aggregate(self) -> dict:
        out = {"n_scenarios": len(self.results), "n_diverged": self.n_diverged}
        for group in MONITOR_GROUPS:
            vals = self.group_values(group)
            if vals.size == 0:
                out[group] = None
                continue
            q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
            out[group] = {
                "mean_of_means": float(vals.mean()),
                "median": float(med), "q1": float(q1), "q3": float(q3),
                "whisker_lo": float(vals.min()), "whisker_hi": float(vals.max()),
                "max_of_means": float(vals.max()),
            }
        return out


def evaluate_trajectories(insys: InternalSystem, dataset: TrainingSet,
                          traj: np.ndarray, alive: np.ndarray,
                          split: str) -> EvaluationReport:
    """Score simulated hybrid trajectories against the reference set.

    A scenario counts as diverged when its simulation died (implicit solve
    failure or state blow-up) or produced non-finite monitored values;
    error statistics then exclude it.
    """
    x_in, x_ex = split_hybrid(traj, dataset.dim_in)
    sim = monitored_series(insys, dataset, x_in, x_ex)
    ref = monitored_series(insys, dataset, dataset.x_in_hat, dataset.x_ex_hat)
    results = []
    for k, sc in enumerate(dataset.scenarios):
        finite = all(np.isfinite(sim[g][k]).all() for g in MONITOR_GROUPS)
        diverged = bool(not alive[k] or not finite)
        mean_err, max_err = {}, {}
        for g in MONITOR_GROUPS:
            if diverged:
                mean_err[g] = max_err[g] = float("nan")
            else:
                rel = relative_error_series(sim[g][k], ref[g][k])
                mean_err[g] = float(rel.mean())
                max_err[g] = float(rel.max())
        results.append(ScenarioResult(scenario=sc, diverged=diverged,
                                      mean_err=mean_err, max_err=max_err))
    return EvaluationReport(split=split, results=tuple(results))


def evaluate_model(model: Mlp, insys: InternalSystem, dataset: TrainingSet,
                   split: str, *, mode: str = "pi"
                   ) -> tuple[EvaluationReport, np.ndarray, np.ndarray]:
    """Closed-loop rollout (alternating for the discrete mode) plus scoring."""
    if mode == "dnn":
        traj, alive = simulate_alternating(model, insys, dataset)
    else:
        traj, alive = simulate_closed_loop(
            model, insys, dataset.z0(), dataset.grid, dataset.stage_of_step,
            mask_failures=True)
    return evaluate_trajectories(insys, dataset, traj, alive, split), traj, alive


def report_to_dict(reports: dict[str, EvaluationReport], *, mode: str,
                   extra: dict | None = None) -> dict:
    out = {"format_version": REPORT_FORMAT_VERSION, "mode": mode,
           "splits": {}}
    for name, rep in reports.items():
        out["splits"][name] = {
            "aggregate": rep.aggregate(),
            "scenarios": [{
                "id": r.scenario.id, "bus": r.scenario.bus,
                "t_clear": r.scenario.t_clear, "alpha": r.scenario.alpha,
                "diverged": r.diverged,
                "mean_err": r.mean_err, "max_err": r.max_err,
            } for r in rep.results],
        }
    if extra:
        out.update(extra)
    return out


def write_eval_csv(dirpath: str, insys: InternalSystem, dataset: TrainingSet,
                   traj: np.ndarray) -> None:
    """Per-scenario CSV of simulated vs reference monitored channels."""
    os.makedirs(dirpath, exist_ok=True)
    x_in, x_ex = split_hybrid(traj, dataset.dim_in)
    sim = monitored_series(insys, dataset, x_in, x_ex)
    ref = monitored_series(insys, dataset, dataset.x_in_hat, dataset.x_ex_hat)
    names = {"tie": list(insys.tie_labels),
             "freq": [f"dw_{lbl}" for lbl in insys.machine_labels],
             "voltage": [f"v_{b}" for b in insys.boundary_buses]}
    times = dataset.grid.times()
    for k, sc in enumerate(dataset.scenarios):
        header, cols = ["t"], [times]
        for g in MONITOR_GROUPS:
            for j, lbl in enumerate(names[g]):
                header += [f"sim_{lbl}", f"ref_{lbl}"]
                cols += [sim[g][k, :, j], ref[g][k, :, j]]
        _write_csv(os.path.join(dirpath, f"scenario_{sc.id}.csv"), header, cols)


# --- training drivers -------------------------------------------------------

@dataclass
class TrainArtifacts:
    mode: str
    model: Mlp
    history: list
    stop_reason: str
    best_loss: float
    jacobian: JacobianEstimate | None = None
    one_step: tuple[float, float] | None = None
    elapsed: float = 0.0


def _merge_history(*results: TrainResult) -> list:
    merged = []
    for res in results:
        for _, loss, gnorm in res.history:
            merged.append((len(merged), loss, gnorm))
    return merged


def train_surrogate(cfg: ExperimentConfig, dataset: TrainingSet,
                    insys: InternalSystem, *, mode: str,
                    progress=None) -> TrainArtifacts:
    """Train one surrogate on the training-window prefix of the dataset.

    Continuous modes warm-start from an open-loop pretraining phase before
    closed-loop fine-tuning; cold-started closed-loop training on a
    marginally damped system is not reliably stable. The discrete mode runs
    its staged learning-rate schedule.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown training mode {mode!r}; pick from {MODES}")
    t_start = time.time()
    n_fit = cfg.grid().nearest_index(cfg.train_window)
    ds_fit = dataset.truncated(n_fit)
    rng = np.random.default_rng([cfg.seed, 10])

    if mode == "dnn":
        model = prepare_discrete_model(cfg.dnn_hidden, ds_fit, rng)
        phases = []
        for lr, epochs in cfg.dnn_schedule:
            res = train_discrete(model, ds_fit, epochs=epochs, lr=lr,
                                 batch=cfg.dnn_batch, rng=rng,
                                 patience=10 ** 9, log=progress)
            model = res.model
            phases.append(res)
        return TrainArtifacts(
            mode=mode, model=model, history=_merge_history(*phases),
            stop_reason=phases[-1].stop_reason, best_loss=phases[-1].best_loss,
            one_step=one_step_error(model, ds_fit),
            elapsed=time.time() - t_start)

    model = prepare_model(cfg.hidden, ds_fit, rng)
    pre = train_open_loop(model, ds_fit, epochs=cfg.pretrain_epochs,
                          lr=cfg.pretrain_lr, log=progress)
    if mode == "open":
        return TrainArtifacts(mode=mode, model=pre.model,
                              history=_merge_history(pre),
                              stop_reason=pre.stop_reason,
                              best_loss=pre.best_loss,
                              elapsed=time.time() - t_start)
    if mode == "pi":
        fin = train_pi(pre.model, insys, ds_fit, epochs=cfg.epochs,
                       lr=cfg.lr, log=progress)
        jac = None
    else:
        jac = pg_estimate_jacobian(ds_fit, connectivity_mask(insys))
        fin = train_pg(pre.model, insys, ds_fit, jac.a, epochs=cfg.epochs,
                       lr=cfg.lr, log=progress)
    return TrainArtifacts(mode=mode, model=fin.model,
                          history=_merge_history(pre, fin),
                          stop_reason=fin.stop_reason, best_loss=fin.best_loss,
                          jacobian=jac, elapsed=time.time() - t_start)


def write_history(path: str, history) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,grad_norm\n")
        for epoch, loss, gnorm in history:
            fh.write(f"{epoch},{loss!r},{gnorm!r}\n")


def read_history(path: str) -> list:
    out = []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            epoch, loss, gnorm = line.strip().split(",")
            out.append((int(epoch), float(loss), float(gnorm)))
    return out


# --- end-to-end pipeline ----------------------------------------------------

def run_training(cfg: ExperimentConfig, *, mode: str, out_dir: str,
                 progress=None) -> dict:
    """Generate data, train, and persist model artifacts. Returns a summary."""
    net = resolve_network(cfg)
    scenarios = generate_scenarios(cfg)
    dataset, insys = build_dataset(net, scenarios["train"], cfg.grid(),
                                   cfg.feature_branches)
    art = train_surrogate(cfg, dataset, insys, mode=mode, progress=progress)
    os.makedirs(out_dir, exist_ok=True)
    save_model(os.path.join(out_dir, "model.json"), art.model)
    write_history(os.path.join(out_dir, "loss_history.csv"), art.history)
    if art.jacobian is not None:
        save_estimate(os.path.join(out_dir, "jacobian.json"), art.jacobian)
    summary = {"mode": mode, "epochs": len(art.history),
               "best_loss": art.best_loss, "stop_reason": art.stop_reason,
               "elapsed_s": round(art.elapsed, 3)}
    if art.one_step is not None:
        summary["one_step_mean"] = art.one_step[0]
        summary["one_step_max"] = art.one_step[1]
    return summary


def run_evaluation(cfg: ExperimentConfig, model: Mlp, *, mode: str,
                   out_dir: str, splits=("train", "test_seen", "test_unseen"),
                   write_csv: bool = True) -> dict:
    """Closed-loop evaluation of a trained model on the configured splits."""
    net = resolve_network(cfg)
    scenarios = generate_scenarios(cfg)
    reports = {}
    os.makedirs(out_dir, exist_ok=True)
    for split in splits:
        scen = scenarios[split]
        if not scen:
            continue
        dataset, insys = build_dataset(net, scen, cfg.grid(),
                                       cfg.feature_branches)
        report, traj, _ = evaluate_model(model, insys, dataset, split,
                                         mode=mode)
        reports[split] = report
        if write_csv:
            write_eval_csv(os.path.join(out_dir, f"eval_{split}"),
                           insys, dataset, traj)
    doc = report_to_dict(reports, mode=mode, extra={"config": config_to_dict(cfg)})
    write_json(os.path.join(out_dir, "report.json"), doc)
    return doc


def simulate_reference(cfg: ExperimentConfig, *, bus: int | None = None,
                       t_clear: float | None = None,
                       alpha: float | None = None, out_path: str) -> dict:
    """Reference simulation of a single fault scenario, written as CSV."""
    grid = cfg.grid()
    if bus is None:
        bus = cfg.train_buses[0]
    if t_clear is None:
        t_clear = grid.snap(0.5 * (cfg.train_clearing[0] + cfg.train_clearing[1]))
    if alpha is None:
        alpha = 0.5 * (cfg.load_scale[0] + cfg.load_scale[1])
    scenario = FaultScenario(id=0, bus=bus, t_fault=grid.snap(cfg.t_fault),
                             t_clear=grid.snap(t_clear), alpha=alpha)
    net = resolve_network(cfg)
    dataset, _ = build_dataset(net, (scenario,), grid, cfg.feature_branches)
    times = grid.times()
    stages = dataset.stage_of_step
    sample_stage = np.concatenate([stages, stages[:, -1:]], axis=1)
    header = (["t", "stage"]
              + [f"x_in_{i}" for i in range(dataset.dim_in)]
              + [f"x_ex_{i}" for i in range(dataset.dim_ex)]
              + [f"s_{i}" for i in range(dataset.dim_s)])
    cols = [times, sample_stage[0].astype(float)]
    cols += [dataset.x_in_hat[0, :, i] for i in range(dataset.dim_in)]
    cols += [dataset.x_ex_hat[0, :, i] for i in range(dataset.dim_ex)]
    cols += [dataset.s_hat[0, :, i] for i in range(dataset.dim_s)]
    _write_csv(out_path, header, cols)
    return {"bus": bus, "t_clear": scenario.t_clear, "alpha": alpha,
            "n_samples": int(times.size), "out": out_path}


# --- gradient check ---------------------------------------------------------

def gradient_check(cfg: ExperimentConfig | None = None, *, n_coords: int = 20,
                   seed: int = 0, eps: float = 1e-5) -> dict:
    """Adjoint gradient vs central finite differences on random coordinates.

    Runs on the configured network (default: the two-machine system over
    0.5 s at h = 1 ms) with a randomly initialized surrogate, so the check
    exercises the full nonlinear path rather than a lucky trained model.
    """
    if cfg is None:
        cfg = ExperimentConfig(network="two_machine", train_buses=(4,),
                               t_end=0.5, h=0.001, t_fault=0.1,
                               train_window=0.5, train_clearing=(0.16, 0.16),
                               n_train=1, n_test=0, feature_branches=(3,),
                               hidden=(16,))
    t_start = time.time()
    net = resolve_network(cfg)
    scenarios = generate_scenarios(cfg)["train"]
    dataset, insys = build_dataset(net, scenarios, cfg.grid(),
                                   cfg.feature_branches)
    rng = np.random.default_rng([seed, 99])
    model = prepare_model(cfg.hidden, dataset, rng)
    model = dataclasses.replace(
        model, theta=rng.normal(scale=0.5, size=model.theta.size))

    def closed_loss(m: Mlp) -> float:
        traj, _ = simulate_closed_loop(m, insys, dataset.z0(), dataset.grid,
                                       dataset.stage_of_step)
        x_in, x_ex = split_hybrid(traj, dataset.dim_in)
        from .hybrid import trajectory_loss
        loss_b, _, _ = trajectory_loss(x_ex, x_in, dataset)
        return float(loss_b.mean())

    traj, _ = simulate_closed_loop(model, insys, dataset.z0(), dataset.grid,
                                   dataset.stage_of_step)
    _, grad, _ = adjoint_gradient(model, insys, traj, dataset)

    coords = np.random.default_rng([seed, 98]).choice(
        model.theta.size, size=min(n_coords, model.theta.size), replace=False)
    fd = np.empty(coords.size)
    for j, c in enumerate(coords):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            theta = model.theta.copy()
            theta[c] += sign * eps
            if slot == 0:
                hi = closed_loss(dataclasses.replace(model, theta=theta))
            else:
                lo = closed_loss(dataclasses.replace(model, theta=theta))
        fd[j] = (hi - lo) / (2 * eps)
    floor = 1e-7 * max(np.abs(fd).max(), 1e-12)
    rel = np.abs(grad[coords] - fd) / np.maximum(np.abs(fd), floor)
    return {
        "n_coords": int(coords.size),
        "max_rel_err": float(rel.max()),
        "median_rel_err": float(np.median(rel)),
        "coords": coords.tolist(),
        "rel_err": rel.tolist(),
        "elapsed_s": round(time.time() - t_start, 3),
    }
