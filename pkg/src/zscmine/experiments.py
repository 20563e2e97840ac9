"""Multi-seed runs, negative-ratio sweeps and convergence measurements."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ZSCError
from .evaluation import aggregate, evaluate
from .mining import Strategy
from .train import TrainConfig, train

SWEEP_COLUMNS = ("strategy", "neg_ratio", "mean", "std_runs", "std_classes")


class RunError(ZSCError):
    """Training or evaluation failed for one seed of a multi-seed run."""

    def __init__(self, seed, cause):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause


def multi_run(dataset, config, seeds, keep_runs=False):
    """Train and evaluate once per seed; aggregate into one report.

    Returns the aggregated :class:`EvalReport`, or ``(report, runs)`` when
    ``keep_runs`` is true, ``runs`` being ``(params, curve, report)`` per seed.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("multi_run needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"seeds must be distinct, got {seeds}")
    runs = []
    for seed in seeds:
        cfg = config.with_hp(seed=seed)
        try:
            params, curve = train(dataset, cfg)
            report = evaluate(params, dataset, config=cfg.to_dict())
        except ZSCError as exc:
            raise RunError(seed, exc) from exc
        runs.append((params, curve, report))
    echo = config.to_dict()
    echo["seeds"] = seeds
    report = aggregate([r[2] for r in runs], config=echo)
    return (report, runs) if keep_runs else report


def ratio_sweep(dataset, config, ratios, seeds, strategies=tuple(Strategy)):
    """One :func:`multi_run` per (strategy, ratio) cell, in row-major order.

    Returns a list of ``(strategy, ratio, report)``.
    """
    ratios = [int(r) for r in ratios]
    if not ratios:
        raise ValueError("ratio list is empty")
    table = []
    for strategy in strategies:
        strategy = Strategy.parse(strategy)
        for n in ratios:
            cfg = replace(config.with_hp(neg_ratio=n), strategy=strategy)
            table.append((strategy.value, n, multi_run(dataset, cfg, seeds)))
    return table


def sweep_csv(table, path=None, metadata=None):
    """Long-format CSV of a sweep with header ``strategy,neg_ratio,mean,std_runs,std_classes``."""
    buf = io.StringIO()
    if metadata is not None:
        buf.write("# " + json.dumps(metadata, sort_keys=True, separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for strategy, n, report in table:
        writer.writerow([strategy, n, repr(report.mean), repr(report.std_over_runs),
                         repr(report.std_over_classes)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def epochs_to_fraction(curve, fraction=0.95):
    """First epoch whose accuracy reaches ``fraction`` of the final accuracy."""
    acc = np.asarray(curve.val_accuracy, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("empty learning curve")
    target = fraction * acc[-1]
    hit = np.flatnonzero(acc >= target)
    return int(curve.epoch[hit[0]])


def convergence_study(dataset, config, seeds, strategies=tuple(Strategy), fraction=0.95):
    """Mean epochs-to-``fraction``-of-final-accuracy per strategy.

    Returns ``{strategy: {"epochs": [...], "mean": float, "curves": [...]}}``.
    """
    out = {}
    for strategy in strategies:
        strategy = Strategy.parse(strategy)
        cfg = replace(config, strategy=strategy, curve_sample_period=1)
        epochs, curves = [], []
        for seed in seeds:
            _, curve = train(dataset, cfg.with_hp(seed=int(seed)))
            epochs.append(epochs_to_fraction(curve, fraction))
            curves.append(curve)
        out[strategy.value] = {"epochs": epochs, "mean": float(np.mean(epochs)), "curves": curves}
    return out


def default_config(**hp):
    """Trainer configuration used by the demos and the acceptance suite."""
    cfg = TrainConfig()
    return cfg.with_hp(**hp) if hp else cfg
