"""Command-line entry point: ``zscmine <command> [flags]``.

Every command accepts ``--config FILE`` (JSON object of settings), ``--seed``
and ``--out``. Settings resolve as built-in defaults, then the config file,
then explicit flags; the resolved settings are echoed into every artifact.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from . import data as data_mod
from . import gradcheck as gradcheck_mod
from .errors import DataError, DivergenceError, ZSCError
from .evaluation import evaluate
from .experiments import RunError, ratio_sweep, sweep_csv
from .mining import Strategy, write_distributions_csv
from .model import Hyperparameters, load_model, save_model
from .train import TrainConfig, grid_search, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_HP = Hyperparameters()
_TC = TrainConfig()

DEFAULTS = {
    "generate": {
        "classes": 20, "test_classes": 5, "images_per_class": 30, "d": 32, "a": 16,
        "noise_sigma": 0.05, "attribute_noise_sigma": 0.05, "min_prototype_correlation": None,
        "standardize": True, "seed": 0, "out": "data",
    },
    "train": {
        "data": None, "strategy": "random", "lam": _HP.lam, "mu": _HP.mu, "m": _HP.m,
        "lr": _HP.learning_rate, "epochs": _HP.epochs, "neg_ratio": _HP.neg_ratio,
        "batch_size": _TC.minibatch_size, "quota": _TC.mining_quota, "curve_period": _TC.curve_sample_period,
        "metric_init_std": None, "dump_distributions": None, "seed": 0, "out": "run",
    },
    "evaluate": {"data": None, "model": None, "role": "test", "seed": 0, "out": None},
    "sweep": {
        "data": None, "ratios": [1, 10, 50, 100], "strategies": [s.value for s in Strategy],
        "runs": 5, "lam": _HP.lam, "mu": _HP.mu, "m": _HP.m, "lr": _HP.learning_rate,
        "epochs": _HP.epochs, "batch_size": _TC.minibatch_size, "quota": _TC.mining_quota,
        "metric_init_std": None, "seed": 0, "out": "sweep",
    },
    "gridsearch": {
        "data": None, "strategy": "random", "grid_lam": [1.0, 10.0], "grid_mu": [1e-3, 1e-2],
        "grid_m": [8, 16], "lr": _HP.learning_rate, "epochs": _HP.epochs, "neg_ratio": _HP.neg_ratio,
        "batch_size": _TC.minibatch_size, "quota": _TC.mining_quota, "metric_init_std": None,
        "seed": 0, "out": "gridsearch",
    },
    "gradcheck": {"points": 100, "d": 6, "a": 4, "m": 3, "tolerance": gradcheck_mod.TOLERANCE,
                  "seed": 0, "out": None},
}

REQUIRED = {"train": ["data"], "evaluate": ["data", "model"], "sweep": ["data"], "gridsearch": ["data"]}


class UsageError(Exception):
    pass


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _strings(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="zscmine", description="Zero-shot classification with hard negative mining.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=None, help="JSON file of settings (flags override it)")
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--out", default=S, help="output directory")
        return p

    def train_flags(p, strategy=True, ratio=True):
        p.add_argument("--data", default=S, help="dataset manifest.json")
        if strategy:
            p.add_argument("--strategy", choices=[s.value for s in Strategy], default=S)
        p.add_argument("--lr", type=float, default=S)
        p.add_argument("--epochs", type=int, default=S)
        if ratio:
            p.add_argument("--neg-ratio", dest="neg_ratio", type=int, default=S)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
        p.add_argument("--quota", type=int, default=S, help="new negatives per positive per epoch")
        p.add_argument("--metric-init-std", dest="metric_init_std", type=float, default=S)

    p = common(sub.add_parser("generate", help="write a synthetic dataset"))
    p.add_argument("--classes", type=int, default=S)
    p.add_argument("--test-classes", dest="test_classes", type=int, default=S)
    p.add_argument("--images-per-class", dest="images_per_class", type=int, default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--a", type=int, default=S)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=S)
    p.add_argument("--attribute-noise-sigma", dest="attribute_noise_sigma", type=float, default=S)
    p.add_argument("--min-prototype-correlation", dest="min_prototype_correlation", type=float, default=S)
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=S)

    p = common(sub.add_parser("train", help="train a model"))
    train_flags(p)
    p.add_argument("--lam", type=float, default=S)
    p.add_argument("--mu", type=float, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--curve-period", dest="curve_period", type=int, default=S)
    p.add_argument("--dump-distributions", dest="dump_distributions", type=int, default=S,
                   metavar="EPOCH", help="write per-image sampling distributions after EPOCH")

    p = common(sub.add_parser("evaluate", help="score a model on unseen classes"))
    p.add_argument("--data", default=S)
    p.add_argument("--model", default=S)
    p.add_argument("--role", choices=["test", "validation"], default=S)

    p = common(sub.add_parser("sweep", help="accuracy versus negative/positive ratio"))
    train_flags(p, strategy=False, ratio=False)
    p.add_argument("--ratios", type=_ints, default=S)
    p.add_argument("--strategies", type=_strings, default=S)
    p.add_argument("--runs", type=int, default=S)
    p.add_argument("--lam", type=float, default=S)
    p.add_argument("--mu", type=float, default=S)
    p.add_argument("--m", type=int, default=S)

    p = common(sub.add_parser("gridsearch", help="select lam, mu, m on held-out training classes"))
    train_flags(p)
    p.add_argument("--grid-lam", dest="grid_lam", type=_floats, default=S)
    p.add_argument("--grid-mu", dest="grid_mu", type=_floats, default=S)
    p.add_argument("--grid-m", dest="grid_m", type=_ints, default=S)

    p = common(sub.add_parser("gradcheck", help="finite-difference check of the objective gradient"))
    p.add_argument("--points", type=int, default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--a", type=int, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--tolerance", type=float, default=S)
    return parser


def resolve(command, args):
    """Merge defaults, config file and flags into one settings dict."""
    settings = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            from_file = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = set(from_file) - set(settings)
        if unknown:
            raise UsageError(f"unknown setting(s) in {path}: {', '.join(sorted(unknown))}")
        settings.update(from_file)
    settings.update(flags)
    missing = [k for k in REQUIRED.get(command, []) if settings.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required setting(s): " + ", ".join("--" + m for m in missing))
    settings["command"] = command
    return settings


def _train_config(s, strategy=None, neg_ratio=None):
    hp = Hyperparameters(
        lam=float(s["lam"]), mu=float(s["mu"]), m=int(s["m"]), learning_rate=float(s["lr"]),
        epochs=int(s["epochs"]), neg_ratio=int(neg_ratio if neg_ratio is not None else s["neg_ratio"]),
        seed=int(s["seed"]),
    )
    return TrainConfig(
        hp=hp,
        strategy=strategy or s["strategy"],
        minibatch_size=int(s["batch_size"]),
        curve_sample_period=int(s.get("curve_period", 1)),
        mining_quota=int(s["quota"]),
        metric_init_std=s.get("metric_init_std"),
    )


def _out_dir(s):
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(s):
    spec = data_mod.SyntheticSpec(
        C_total=int(s["classes"]), C_test=int(s["test_classes"]), images_per_class=int(s["images_per_class"]),
        d=int(s["d"]), a=int(s["a"]), noise_sigma=float(s["noise_sigma"]),
        attribute_noise_sigma=float(s["attribute_noise_sigma"]), seed=int(s["seed"]),
        min_prototype_correlation=s["min_prototype_correlation"],
    )
    try:
        spec.validate()
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    ds = data_mod.generate_synthetic(spec)
    if s["standardize"]:
        ds = data_mod.standardize(ds)
    path = data_mod.save(ds, s["out"], extra={"generator": {"spec": asdict(spec), "run_config": s}})
    n_train = len(ds.indices("train"))
    print(f"wrote {path}: N={ds.n} ({n_train} train images), d={ds.d}, a={ds.a}, "
          f"C={ds.num_classes} ({len(ds.classes_with_role('test'))} test classes)")
    return EXIT_OK


def cmd_train(s):
    ds = data_mod.load(s["data"])
    cfg = _train_config(s)
    out = _out_dir(s)
    meta = {"run_config": s, "train_config": cfg.to_dict()}
    callback = None
    if s.get("dump_distributions") is not None:
        dump_epoch = int(s["dump_distributions"])

        def callback(epoch, params, state):
            if epoch == dump_epoch:
                pool = data_mod.build_candidate_pool(ds)
                write_distributions_csv(out / f"distributions_epoch{epoch}.csv", cfg.strategy, params, pool,
                                        log_q=state.q_cache)

    params, curve = train(ds, cfg, callback=callback)
    save_model(out / "model.zscm", params, meta)
    curve.to_csv(out / "curve.csv", metadata=meta)
    if len(curve):
        print(f"epoch {curve.epoch[-1]}: objective={curve.objective[-1]:.6g} "
              f"accuracy={curve.val_accuracy[-1]:.4f} |D-|={curve.d_minus_size[-1]}")
    print(f"wrote {out / 'model.zscm'} and {out / 'curve.csv'}")
    return EXIT_OK


def cmd_evaluate(s):
    ds = data_mod.load(s["data"])
    params, header = load_model(s["model"], dataset=ds)
    report = evaluate(params, ds, role=s["role"], config={"run_config": s, "model_config": header.get("config", {})})
    text = report.to_json()
    if s.get("out"):
        out = _out_dir(s)
        (out / "report.json").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_sweep(s):
    ds = data_mod.load(s["data"])
    base = _train_config(s, strategy="random", neg_ratio=1)
    seeds = [int(s["seed"]) + i for i in range(int(s["runs"]))]
    table = ratio_sweep(ds, base, s["ratios"], seeds, strategies=s["strategies"])
    out = _out_dir(s)
    meta = {"run_config": s, "seeds": seeds}
    text = sweep_csv(table, out / "sweep.csv", metadata=meta)
    reports = [{"strategy": st, "neg_ratio": n, "report": r.to_dict()} for st, n, r in table]
    (out / "reports.json").write_text(json.dumps({"config": meta, "cells": reports}, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return EXIT_OK


def cmd_gridsearch(s):
    ds = data_mod.load(s["data"])
    cfg = _train_config(dict(s, lam=_HP.lam, mu=_HP.mu, m=_HP.m, curve_period=1))
    grid = {"lam": s["grid_lam"], "mu": s["grid_mu"], "m": s["grid_m"]}
    result = grid_search(ds, grid, cfg)
    out = _out_dir(s)
    meta = {"run_config": s}
    summary = {
        "best": result.best.to_dict(),
        "validation_classes": result.validation_classes,
        "scores": result.scores,
        "config": meta,
    }
    (out / "gridsearch.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_model(out / "model.zscm", result.params, dict(meta, best=result.best.to_dict()))
    result.curve.to_csv(out / "curve.csv", metadata=meta)
    print(json.dumps({"best": summary["best"], "validation_classes": result.validation_classes}, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(s):
    errors = gradcheck_mod.run(seed=int(s["seed"]), points=int(s["points"]), d=int(s["d"]), a=int(s["a"]),
                               m=int(s["m"]))
    worst = max(errors)
    tol = float(s["tolerance"])
    result = {"points": len(errors), "max_relative_error": worst, "tolerance": tol,
              "passed": worst < tol, "config": s}
    if s.get("out"):
        (_out_dir(s) / "gradcheck.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"gradcheck: {len(errors)} points, max relative error {worst:.3e} (tolerance {tol:g})")
    return EXIT_OK if worst < tol else EXIT_NUMERIC


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "gridsearch": cmd_gridsearch,
    "gradcheck": cmd_gradcheck,
}


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None):
    previous = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return _run(build_parser(), argv)
    finally:
        warnings.showwarning = previous


def _run(parser, argv):
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, DivergenceError) else EXIT_DATA
    except (ZSCError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
