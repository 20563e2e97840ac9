"""Negative-pair mining.

Three strategies grow the negative set ``D-`` epoch by epoch:

``random``
    uniform over the candidates of each image;
``uncertainty``
    candidates weighted by ``u = exp(-(S(x_i, y) - S(x_i, y*)))``, which is
    large when a wrong attribute vector is nearly as close to the image as its
    own annotation ``y*``;
``unc-cor``
    ``u`` multiplied by ``q(y) = exp(-mean_{y' in class(y)} ||y - y'||)``,
    favouring attribute vectors typical of their class.

Scores are normalised per image and sampled without replacement, so each
(image, candidate) pair enters ``D-`` at most once.
"""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .model import PairSet, embed


class Strategy(str, enum.Enum):
    RANDOM = "random"
    UNCERTAINTY = "uncertainty"
    UNC_COR = "unc-cor"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"unc/cor": "unc-cor", "unc_cor": "unc-cor", "uncertainty-correlation": "unc-cor"}
        value = aliases.get(str(value).lower(), str(value).lower())
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}; choose from random, uncertainty, unc-cor") from None


class DegenerateCorrelationWarning(UserWarning):
    """All correlation scores equal 1, so unc-cor behaves exactly like uncertainty."""


class ReplacementFallbackWarning(UserWarning):
    """Fewer candidates than requested negatives; sampling with replacement."""


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def uncertainty_score(model, x_i, y, y_star):
    """``exp(-(S(x_i, y) - S(x_i, y_star)))`` for one or many candidates ``y``."""
    emb = embed(model, x_i)
    s = np.linalg.norm((emb - np.asarray(y, dtype=np.float64)) @ model.W_A, axis=-1)
    s_star = np.linalg.norm((emb - np.asarray(y_star, dtype=np.float64)) @ model.W_A, axis=-1)
    return np.exp(-(s - s_star))


def correlation_score(y, class_set):
    """``exp(-mean ||y - y'||)`` over the attribute vectors ``class_set`` of y's class."""
    class_set = np.atleast_2d(np.asarray(class_set, dtype=np.float64))
    if class_set.shape[0] == 0 or class_set.size == 0:
        raise DataError("correlation score needs a non-empty class set")
    dist = np.linalg.norm(class_set - np.asarray(y, dtype=np.float64), axis=1)
    return float(np.exp(-dist.mean()))


def combined_score(u, q):
    return u * q


def correlation_cache(pool):
    """Log correlation score of every training image's attribute vector.

    Returned as an array indexed by dataset row (NaN outside the training
    split). Logs are kept so that ``q = 1`` contributes an exact zero.
    """
    ds = pool.dataset
    log_q = np.full(ds.n, np.nan)
    for members in pool.class_sets.values():
        Y = ds.attributes[members]
        dist = np.linalg.norm(Y[:, None, :] - Y[None, :, :], axis=2)
        log_q[members] = -dist.mean(axis=1)
    return log_q


# ---------------------------------------------------------------------------
# per-image distributions
# ---------------------------------------------------------------------------

@dataclass
class ScoreContext:
    """Projected embeddings and attributes for one model snapshot.

    ``S(x_i, y_c) = ||P[i] - Q[c]||`` with ``P = embed(X) @ W_A`` and
    ``Q = Y @ W_A``, so one projection per epoch serves every pair.
    """

    P: np.ndarray
    Q: np.ndarray

    @classmethod
    def build(cls, model, dataset):
        P = embed(model, dataset.features) @ model.W_A
        Q = dataset.attributes @ model.W_A
        return cls(P, Q)

    def similarities(self, image, sources):
        return np.linalg.norm(self.P[image] - self.Q[sources], axis=1)


def log_scores(strategy, context, image, candidates, log_q=None):
    """Unnormalised log-scores of ``candidates`` for ``image``."""
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.RANDOM:
        return np.zeros(len(candidates))
    s = context.similarities(image, candidates)
    s_star = np.linalg.norm(context.P[image] - context.Q[image])
    out = -(s - s_star)
    if strategy is Strategy.UNC_COR:
        out = out + log_q[candidates]
    return out


def normalize_log_scores(logs):
    """Softmax of log-scores: the per-image sampling distribution."""
    logs = np.asarray(logs, dtype=np.float64)
    shifted = np.exp(logs - logs.max())
    return shifted / shifted.sum()


def normalize_scores(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(scores < 0) or not np.isfinite(scores).all():
        raise ValueError("scores must be finite and non-negative")
    total = scores.sum()
    if total <= 0:
        raise ValueError("scores sum to zero")
    return scores / total


def draw_without_replacement(probabilities, k, rng):
    """Draw ``k`` distinct positions by successive weighted sampling."""
    p = np.asarray(probabilities, dtype=np.float64)
    k = min(int(k), int(np.count_nonzero(p)))
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(len(p), size=k, replace=False, p=p / p.sum()).astype(np.int64)


def image_distribution(strategy, model, pool, image, candidates=None, log_q=None, context=None):
    """Sampling distribution over ``candidates`` (default: all) for ``image``.

    Returns ``(candidates, probabilities)``.
    """
    strategy = Strategy.parse(strategy)
    if candidates is None:
        candidates = pool.candidates(image)
    if strategy is Strategy.UNC_COR and log_q is None:
        log_q = correlation_cache(pool)
    if context is None and strategy is not Strategy.RANDOM:
        context = ScoreContext.build(model, pool.dataset)
    return candidates, normalize_log_scores(log_scores(strategy, context, image, candidates, log_q))


# ---------------------------------------------------------------------------
# random negatives
# ---------------------------------------------------------------------------

def random_negatives(pool, count_per_positive, rng, images=None):
    """``count_per_positive`` uniformly drawn negatives for every training image.

    Draws without replacement; when an image has fewer candidates than
    requested it falls back to drawing with replacement and warns.
    """
    n = int(count_per_positive)
    if images is None:
        images = pool.train_indices
    img_out, src_out = [], []
    fallback = []
    for i in images:
        cands = pool.candidates(i)
        if len(cands) == 0:
            raise DataError(f"image {int(i)} has no negative candidates")
        replace = n > len(cands)
        if replace:
            fallback.append(int(i))
        chosen = cands[rng.choice(len(cands), size=n, replace=replace)]
        img_out.append(np.full(n, i, dtype=np.int64))
        src_out.append(chosen)
    if fallback:
        warnings.warn(
            f"{len(fallback)} image(s) have fewer than {n} candidates; sampled with replacement",
            ReplacementFallbackWarning,
            stacklevel=2,
        )
    if not img_out:
        return PairSet.from_sources(pool.dataset, [], [], -1)
    return PairSet.from_sources(pool.dataset, np.concatenate(img_out), np.concatenate(src_out), -1)


# ---------------------------------------------------------------------------
# epoch-wise growth
# ---------------------------------------------------------------------------

@dataclass
class MiningState:
    strategy: Strategy
    capacity: int
    rng: np.random.Generator
    q_cache: np.ndarray | None = None
    images: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    selected: dict = field(default_factory=dict)
    skipped: int = 0

    def __len__(self):
        return len(self.images)

    def d_minus(self, dataset):
        return PairSet.from_sources(dataset, self.images, self.sources, -1)

    @property
    def full(self):
        return len(self.images) >= self.capacity

    def _mask(self, pool, image):
        mask = self.selected.get(image)
        if mask is None:
            mask = np.zeros(len(pool.candidates(image)), dtype=bool)
            self.selected[image] = mask
        return mask

    def add(self, pool, image, positions):
        cands = pool.candidates(image)
        mask = self._mask(pool, image)
        for pos in positions:
            if len(self.images) >= self.capacity:
                return
            mask[pos] = True
            self.images.append(int(image))
            self.sources.append(int(cands[pos]))


def init_mining(strategy, pool, n_positives, neg_ratio, rng):
    """Fresh mining state with capacity ``neg_ratio * n_positives``."""
    strategy = Strategy.parse(strategy)
    state = MiningState(strategy=strategy, capacity=int(neg_ratio) * int(n_positives), rng=rng)
    if strategy is Strategy.UNC_COR:
        state.q_cache = correlation_cache(pool)
        train_logs = state.q_cache[pool.train_indices]
        if np.all(train_logs == 0.0):
            warnings.warn(
                "all within-class attribute vectors are identical (q == 1 everywhere); "
                "unc-cor reduces to uncertainty on this dataset",
                DegenerateCorrelationWarning,
                stacklevel=2,
            )
    return state


def bootstrap_negatives(state, pool, d_plus, count=1):
    """First-epoch negatives: ``count`` uniform draws per positive, whatever the strategy."""
    for image in d_plus.image_index:
        if state.full:
            break
        mask = state._mask(pool, int(image))
        free = np.flatnonzero(~mask)
        if len(free) == 0:
            state.skipped += 1
            continue
        k = min(count, len(free))
        picks = free[state.rng.choice(len(free), size=k, replace=False)]
        state.add(pool, int(image), picks)
    return state


def sample_epoch_negatives(state, model, pool, d_plus, quota):
    """Grow ``D-`` by ``quota`` negatives per positive image from the strategy's distribution.

    Each image's scores over its not-yet-selected candidates are normalised
    and ``quota`` of them drawn without replacement. Growth stops when
    ``D-`` reaches its capacity. Images with no free candidate are skipped
    and counted in ``state.skipped``.
    """
    quota = int(quota)
    if quota <= 0 or state.full:
        return state
    context = None
    if state.strategy is not Strategy.RANDOM:
        context = ScoreContext.build(model, pool.dataset)
    for image in d_plus.image_index:
        if state.full:
            break
        image = int(image)
        mask = state._mask(pool, image)
        free = np.flatnonzero(~mask)
        if len(free) == 0:
            state.skipped += 1
            continue
        cands = pool.candidates(image)[free]
        probs = normalize_log_scores(log_scores(state.strategy, context, image, cands, state.q_cache))
        picks = draw_without_replacement(probs, quota, state.rng)
        state.add(pool, image, free[picks])
    return state


def write_distributions_csv(path, strategy, model, pool, images=None, log_q=None):
    """Dump per-image sampling distributions as ``image,candidate,probability`` rows."""
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.UNC_COR and log_q is None:
        log_q = correlation_cache(pool)
    context = ScoreContext.build(model, pool.dataset)
    if images is None:
        images = pool.train_indices
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "candidate", "probability"])
        for image in images:
            cands, probs = image_distribution(strategy, model, pool, int(image), log_q=log_q, context=context)
            for c, p in zip(cands, probs):
                writer.writerow([int(image), int(c), repr(float(p))])
