"""Command-line front end.

Exit codes: 0 success, 1 configuration or input-structure problems,
2 numerical failures (lost convergence, divergence, failed training).
Progress and errors go to stderr as one-line JSON; the final summary goes
to stdout as one-line JSON.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .errors import (ConfigError, DataError, DegenerateNetworkError,
                     DivergenceError, NonconvergenceError, StructuralError,
                     TrainingFailureError)

_CONFIG_ERRORS = (ConfigError, DataError, StructuralError, FileNotFoundError,
                  json.JSONDecodeError)
_NUMERICAL_ERRORS = (NonconvergenceError, DivergenceError,
                     DegenerateNetworkError, TrainingFailureError,
                     FloatingPointError)


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _diag(obj) -> None:
    print(json.dumps(obj, sort_keys=True), file=sys.stderr, flush=True)


def _load(args):
    from .harness import load_config
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _progress(every: int = 25):
    def cb(epoch, loss, gnorm):
        if epoch % every == 0:
            _diag({"epoch": epoch, "loss": loss, "grad_norm": gnorm})
    return cb


def cmd_simulate(args) -> dict:
    from .harness import simulate_reference
    return simulate_reference(_load(args), bus=args.bus, t_clear=args.t_clear,
                              alpha=args.alpha, out_path=args.out)


def cmd_gen_data(args) -> dict:
    import os

    from .harness import (build_dataset, generate_scenarios, resolve_network,
                          save_dataset)
    cfg = _load(args)
    net = resolve_network(cfg)
    scenarios = generate_scenarios(cfg)
    summary = {"out": args.out}
    for split, scen in scenarios.items():
        if not scen:
            summary[f"n_{split}"] = 0
            continue
        dataset, _ = build_dataset(net, scen, cfg.grid(), cfg.feature_branches)
        save_dataset(os.path.join(args.out, split), dataset, net,
                     cfg.feature_branches)
        summary[f"n_{split}"] = len(scen)
    return summary


def cmd_train(args) -> dict:
    from .harness import run_training
    cfg = _load(args)
    progress = _progress() if args.verbose else None
    return run_training(cfg, mode=args.mode, out_dir=args.out,
                        progress=progress)


def cmd_estimate_jacobian(args) -> dict:
    from .estimation import connectivity_mask, pg_estimate_jacobian, save_estimate
    from .harness import build_dataset, generate_scenarios, resolve_network
    cfg = _load(args)
    net = resolve_network(cfg)
    scenarios = generate_scenarios(cfg)["train"]
    dataset, insys = build_dataset(net, scenarios, cfg.grid(),
                                   cfg.feature_branches)
    n_fit = cfg.grid().nearest_index(cfg.train_window)
    est = pg_estimate_jacobian(dataset.truncated(n_fit),
                               connectivity_mask(insys))
    save_estimate(args.out, est)
    return {"rows": est.a.shape[0], "cols": est.a.shape[1],
            "n_samples": est.n_samples,
            "max_condition": float(max(est.cond)), "out": args.out}


def cmd_evaluate(args) -> dict:
    from .harness import run_evaluation
    from .mlp import load_model
    cfg = _load(args)
    model = load_model(args.model)
    doc = run_evaluation(cfg, model, mode=args.mode, out_dir=args.out,
                         write_csv=not args.no_csv)
    summary = {"out": args.out, "mode": args.mode}
    for split, body in doc["splits"].items():
        agg = body["aggregate"]
        summary[split] = {
            "n_diverged": agg["n_diverged"],
            "tie_mean": None if agg["tie"] is None else agg["tie"]["mean_of_means"],
            "freq_mean": None if agg["freq"] is None else agg["freq"]["mean_of_means"],
        }
    return summary


def cmd_gradcheck(args) -> dict:
    from .fileio import write_json
    from .harness import gradient_check, load_config
    cfg = load_config(args.config) if args.config else None
    result = gradient_check(cfg, n_coords=args.n_coords, seed=args.seed or 0)
    if args.out:
        write_json(args.out, result)
    summary = {k: result[k] for k in ("n_coords", "max_rel_err",
                                      "median_rel_err", "elapsed_s")}
    if result["max_rel_err"] > args.tol:
        _emit(summary)
        raise NonconvergenceError(
            f"adjoint/finite-difference mismatch {result['max_rel_err']:.3e} "
            f"exceeds tolerance {args.tol:.1e}")
    return summary


def build_parser() -> _Parser:
    parser = _Parser(prog="dynequiv",
                     description="Neural dynamic equivalents for grid simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="reference simulation of one fault")
    p.add_argument("--config", required=True)
    p.add_argument("--bus", type=int)
    p.add_argument("--t-clear", type=float, dest="t_clear")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="write train/test reference datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a surrogate")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("open", "pi", "pg", "dnn"), default="pi")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true",
                   help="emit JSON progress lines to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate-jacobian",
                       help="data-driven internal Jacobian estimate")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_estimate_jacobian)

    p = sub.add_parser("evaluate", help="closed-loop evaluation of a model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--mode", choices=("open", "pi", "pg", "dnn"), default="pi")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-csv", action="store_true",
                   help="skip per-scenario CSV dumps")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck",
                       help="adjoint gradient vs finite differences")
    p.add_argument("--config", help="optional experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-coords", type=int, default=20, dest="n_coords")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", help="optional JSON path for full results")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _emit(args.func(args))
        return 0
    except _CONFIG_ERRORS as exc:
        _diag({"error": "config", "type": type(exc).__name__,
               "message": str(exc)})
        return 1
    except _NUMERICAL_ERRORS as exc:
        _diag({"error": "numerical", "type": type(exc).__name__,
               "message": str(exc)})
        return 2


if __name__ == "__main__":
    sys.exit(main())
