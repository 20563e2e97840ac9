"""Minibatch SGD over the frequency-weighted objective with growing negative sets."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import build_candidate_pool
from .errors import DataError, DivergenceError
from .evaluation import evaluate
from .mining import Strategy, bootstrap_negatives, init_mining, sample_epoch_negatives
from .model import Hyperparameters, ModelParameters, PairSet, pair_loss_and_grad, weighted_objective

DIVERGENCE_LIMIT = 1e12


@dataclass
class TrainConfig:
    """Trainer settings.

    ``metric_init_std`` of ``None`` draws ``W_A`` entries with standard
    deviation ``1/sqrt(m)``, which keeps metric-space norms comparable to
    attribute-space norms at initialization. ``W_A = 0`` is a stationary point
    of the hinge term, so a near-zero start leaves the metric untrained.
    """

    hp: Hyperparameters = field(default_factory=Hyperparameters)
    strategy: Strategy = Strategy.RANDOM
    minibatch_size: int = 64
    curve_sample_period: int = 1
    mining_quota: int = 1
    init_std: float = 0.01
    metric_init_std: float | None = None

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if int(self.minibatch_size) < 1:
            raise ValueError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if int(self.curve_sample_period) < 1:
            raise ValueError(f"curve_sample_period must be >= 1, got {self.curve_sample_period}")
        if int(self.mining_quota) < 0:
            raise ValueError(f"mining_quota must be >= 0, got {self.mining_quota}")

    def with_hp(self, **changes):
        return replace(self, hp=replace(self.hp, **changes))

    def to_dict(self):
        out = asdict(self)
        out["strategy"] = self.strategy.value
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        hp = Hyperparameters(**data.pop("hp", {}))
        return cls(hp=hp, **data)


@dataclass
class LearningCurve:
    epoch: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    d_minus_size: list = field(default_factory=list)

    COLUMNS = ("epoch", "objective", "val_accuracy", "d_minus_size")

    def __len__(self):
        return len(self.epoch)

    def append(self, epoch, objective, val_accuracy, d_minus_size):
        self.epoch.append(int(epoch))
        self.objective.append(float(objective))
        self.val_accuracy.append(float(val_accuracy))
        self.d_minus_size.append(int(d_minus_size))

    def to_csv(self, path=None, metadata=None):
        """CSV text; ``metadata`` is embedded as a leading ``# `` JSON comment line."""
        buf = io.StringIO()
        if metadata is not None:
            buf.write("# " + json.dumps(metadata, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for row in zip(self.epoch, self.objective, self.val_accuracy, self.d_minus_size):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), row[3]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path):
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        curve = cls()
        for row in csv.DictReader(lines):
            curve.append(int(row["epoch"]), float(row["objective"]), float(row["val_accuracy"]),
                         int(row["d_minus_size"]))
        return curve


def _eval_role(dataset):
    if dataset.classes_with_role("validation"):
        return "validation"
    if dataset.classes_with_role("test"):
        return "test"
    return None


def _sgd_step(params, grad, lr):
    params.W_X -= lr * grad.W_X
    params.b_X -= lr * grad.b_X
    params.W_A -= lr * grad.W_A
    params.tau -= lr * grad.tau


def _rngs(seed):
    init, mining, shuffle = np.random.SeedSequence(int(seed)).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(mining), np.random.default_rng(shuffle)


def train(dataset, config=None, eval_role="auto", callback=None):
    """Fit model parameters; returns ``(params, curve)``.

    Epoch 1 draws one random negative per positive. Every later epoch first
    grows ``D-`` by ``mining_quota`` negatives per positive from the current
    strategy (until ``neg_ratio * |D+|``), then runs one pass of shuffled
    minibatch SGD. Within a minibatch positive terms are weighted by
    ``1/|D+|``, negative terms by ``1/|D-|`` and the regulariser by
    ``batch/(|D+| + |D-|)``, so the minibatch gradients of one epoch sum to
    the full-batch gradient.

    ``eval_role`` selects the classes scored for the curve's accuracy column
    (``"auto"``: validation classes if any, else test classes).
    ``callback(epoch, params, state)`` runs after each epoch.
    """
    config = config or TrainConfig()
    hp = config.hp
    init_rng, mine_rng, shuffle_rng = _rngs(hp.seed)
    metric_std = config.metric_init_std
    if metric_std is None:
        metric_std = 1.0 / math.sqrt(int(hp.m))
    params = ModelParameters.initialize(dataset.d, dataset.a, int(hp.m), init_rng, std=config.init_std,
                                        metric_std=metric_std)
    curve = LearningCurve()
    if int(hp.epochs) == 0:
        return params, curve

    pool = build_candidate_pool(dataset)
    d_plus = PairSet.positives(dataset, pool.train_indices)
    state = init_mining(config.strategy, pool, len(d_plus), hp.neg_ratio, mine_rng)
    if eval_role == "auto":
        eval_role = _eval_role(dataset)

    for epoch in range(1, int(hp.epochs) + 1):
        if epoch == 1:
            bootstrap_negatives(state, pool, d_plus, 1)
        else:
            sample_epoch_negatives(state, params, pool, d_plus, config.mining_quota)
        d_minus = state.d_minus(dataset)
        # overflow surfaces through the divergence guard below
        with np.errstate(over="ignore", invalid="ignore"):
            _sgd_epoch(params, hp, d_plus, d_minus, dataset.features, config.minibatch_size, shuffle_rng)
            objective = weighted_objective(params, hp, d_plus, d_minus, dataset.features)
        if not math.isfinite(objective) or objective > DIVERGENCE_LIMIT or not params.is_finite():
            raise DivergenceError(
                f"objective diverged at epoch {epoch}: {objective!r}",
                snapshot={"epoch": epoch, "objective": objective, "params": params.copy(),
                          "d_minus_size": len(d_minus)},
            )
        if epoch % config.curve_sample_period == 0:
            acc = evaluate(params, dataset, role=eval_role).mean if eval_role else float("nan")
            curve.append(epoch, objective, acc, len(d_minus))
        if callback is not None:
            callback(epoch, params, state)
    return params, curve


def minibatch_gradients(params, hp, d_plus, d_minus, features, batch_size, rng):
    """Yield the gradient of each shuffled minibatch, evaluated at the current ``params``.

    Callers may update ``params`` between iterations. At fixed parameters the
    yielded gradients sum to :func:`objective_gradient`.
    """
    idx = np.concatenate([d_plus.image_index, d_minus.image_index])
    Y = np.vstack([d_plus.attributes, d_minus.attributes])
    z = np.concatenate([d_plus.z, d_minus.z])
    w = np.concatenate([np.full(len(d_plus), 1.0 / len(d_plus)),
                        np.full(len(d_minus), 1.0 / len(d_minus))])
    total = len(idx)
    order = rng.permutation(total)
    for start in range(0, total, int(batch_size)):
        b = order[start:start + int(batch_size)]
        yield pair_loss_and_grad(params, features[idx[b]], Y[b], z[b], w[b], hp.lam, hp.mu * len(b) / total)[1]


def _sgd_epoch(params, hp, d_plus, d_minus, features, batch_size, rng):
    for grad in minibatch_gradients(params, hp, d_plus, d_minus, features, batch_size, rng):
        _sgd_step(params, grad, hp.learning_rate)


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

@dataclass
class GridSearchResult:
    best: Hyperparameters
    scores: list
    validation_classes: list
    params: ModelParameters
    curve: LearningCurve


def holdout_classes(dataset, rng, fraction=0.2):
    """Randomly pick ``ceil(fraction * C_train)`` training classes."""
    train_classes = dataset.classes_with_role("train")
    n_val = math.ceil(fraction * len(train_classes))
    chosen = rng.choice(np.array(train_classes), size=n_val, replace=False)
    return sorted(int(k) for k in chosen)


def grid_search(dataset, grid, config=None):
    """Pick ``(lam, mu, m)`` by validation accuracy on held-out training classes.

    ``grid`` maps ``"lam"``, ``"mu"`` and ``"m"`` to candidate lists (a missing
    key keeps the configured value). 20% of the training classes, rounded
    up, become validation classes; each grid point is trained on the rest.
    The winner (first in grid order on ties) is retrained on all training
    classes. A point whose training diverges scores ``-inf``.
    """
    config = config or TrainConfig()
    grid = dict(grid)
    lams = list(grid.get("lam", [config.hp.lam]))
    mus = list(grid.get("mu", [config.hp.mu]))
    ms = list(grid.get("m", [config.hp.m]))
    points = list(itertools.product(lams, mus, ms))
    if not points:
        raise ValueError("hyperparameter grid is empty")
    train_classes = dataset.classes_with_role("train")
    if len(train_classes) < 5:
        raise DataError(f"grid search needs at least 5 training classes, found {len(train_classes)}")

    rng = np.random.default_rng(np.random.SeedSequence([int(config.hp.seed), 20]))
    val_classes = holdout_classes(dataset, rng)
    roles = dict(dataset.roles)
    for k in val_classes:
        roles[k] = "validation"
    cv_data = dataset.with_roles(roles)

    scores = []
    best, best_acc = None, -np.inf
    for lam, mu, m in points:
        cfg = config.with_hp(lam=lam, mu=mu, m=int(m))
        try:
            params, _ = train(cv_data, cfg, eval_role=None)
            acc = evaluate(params, cv_data, role="validation").mean
            diverged = False
        except DivergenceError:
            # a diverging point loses; the search goes on
            acc, diverged = float("-inf"), True
        scores.append({"lam": lam, "mu": mu, "m": int(m), "val_accuracy": acc, "diverged": diverged})
        if acc > best_acc:
            best, best_acc = cfg.hp, acc

    params, curve = train(dataset, replace(config, hp=best))
    return GridSearchResult(best, scores, val_classes, params, curve)
