"""Similarity model, loss terms and their gradients.

Images are embedded into attribute space with a linear map followed by a
ReLU, and compared to attribute vectors by the Euclidean norm of the
difference after projection by a metric matrix ``W_A``::

    embed(x)         = max(0, x @ W_X + b_X)
    similarity(x, y) = || (embed(x) - y) @ W_A ||_2

Lower similarity means more consistent. Training minimises a hinge loss on
the squared similarity against a learned threshold ``tau``, a squared
attribute-prediction error on positive pairs and an L2 penalty.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, EmptyPairSetError


@dataclass
class ModelParameters:
    """Trainable parameters; also used to hold gradients of the same shape."""

    W_X: np.ndarray
    b_X: np.ndarray
    W_A: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        self.W_X = np.asarray(self.W_X, dtype=np.float64)
        self.b_X = np.asarray(self.b_X, dtype=np.float64).ravel()
        self.W_A = np.asarray(self.W_A, dtype=np.float64)
        self.tau = float(self.tau)
        d, a = self.W_X.shape
        if self.b_X.shape != (a,):
            raise DimensionError("b_X length", a, self.b_X.shape[0])
        if self.W_A.ndim != 2 or self.W_A.shape[0] != a:
            raise DimensionError("W_A rows", a, self.W_A.shape[0] if self.W_A.ndim else None)

    @classmethod
    def initialize(cls, d, a, m, rng, std=0.01, tau=1.0, metric_std=None):
        """Normal(0, std) weights, zero bias, ``tau = 1``.

        ``metric_std`` overrides the standard deviation of ``W_A`` entries.
        """
        metric_std = std if metric_std is None else metric_std
        return cls(
            W_X=rng.normal(0.0, std, size=(d, a)),
            b_X=np.zeros(a),
            W_A=rng.normal(0.0, metric_std, size=(a, m)),
            tau=tau,
        )

    @classmethod
    def zeros(cls, d, a, m):
        return cls(np.zeros((d, a)), np.zeros(a), np.zeros((a, m)), 0.0)

    @property
    def dims(self):
        d, a = self.W_X.shape
        return d, a, self.W_A.shape[1]

    def copy(self):
        return ModelParameters(self.W_X.copy(), self.b_X.copy(), self.W_A.copy(), self.tau)

    def flat(self):
        return np.concatenate([self.W_X.ravel(), self.b_X, self.W_A.ravel(), [self.tau]])

    @classmethod
    def from_flat(cls, vector, d, a, m):
        vector = np.asarray(vector, dtype=np.float64)
        i = 0
        W_X = vector[i:i + d * a].reshape(d, a)
        i += d * a
        b_X = vector[i:i + a]
        i += a
        W_A = vector[i:i + a * m].reshape(a, m)
        i += a * m
        return cls(W_X.copy(), b_X.copy(), W_A.copy(), float(vector[i]))

    def is_finite(self):
        return bool(np.all(np.isfinite(self.flat())))

    def check_features(self, d):
        if d != self.dims[0]:
            raise DimensionError("feature dimension", self.dims[0], d)


@dataclass
class Hyperparameters:
    lam: float = 10.0
    mu: float = 1e-2
    m: int = 16
    learning_rate: float = 0.2
    epochs: int = 80
    neg_ratio: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError(f"lam and mu must be non-negative, got lam={self.lam}, mu={self.mu}")
        if int(self.m) < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if int(self.neg_ratio) < 1:
            raise ValueError(f"neg_ratio must be >= 1, got {self.neg_ratio}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.epochs) < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def to_dict(self):
        return asdict(self)


@dataclass
class PairSet:
    """Pairs ``(image, attribute vector, z)``.

    ``source_index`` is the image whose annotation supplied the attribute
    vector; it equals ``image_index`` for positive pairs and identifies the
    candidate for negatives.
    """

    image_index: np.ndarray
    attributes: np.ndarray
    z: np.ndarray
    source_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.image_index = np.asarray(self.image_index, dtype=np.int64).ravel()
        self.z = np.asarray(self.z, dtype=np.float64).ravel()
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        if self.attributes.ndim == 1:
            self.attributes = self.attributes.reshape(len(self.image_index), -1)
        if self.source_index is None:
            self.source_index = self.image_index.copy()
        self.source_index = np.asarray(self.source_index, dtype=np.int64).ravel()
        n = len(self.image_index)
        if self.attributes.shape[0] != n or len(self.z) != n or len(self.source_index) != n:
            raise DimensionError("pair set length", n, (self.attributes.shape[0], len(self.z)))

    def __len__(self):
        return len(self.image_index)

    @classmethod
    def from_sources(cls, dataset, image_index, source_index, z):
        image_index = np.asarray(image_index, dtype=np.int64)
        source_index = np.asarray(source_index, dtype=np.int64)
        zz = np.full(len(image_index), float(z))
        return cls(image_index, dataset.attributes[source_index].reshape(len(image_index), dataset.a), zz, source_index)

    @classmethod
    def positives(cls, dataset, image_index=None):
        if image_index is None:
            image_index = dataset.indices("train")
        return cls.from_sources(dataset, image_index, image_index, +1)


# ---------------------------------------------------------------------------
# scalar and vectorised forward functions
# ---------------------------------------------------------------------------

def embed(params, x):
    """ReLU embedding of one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if d != params.W_X.shape[0]:
        raise DimensionError("feature dimension", params.W_X.shape[0], d)
    return np.maximum(0.0, x @ params.W_X + params.b_X)


def similarity(params, x, y):
    """Metric distance between embedded images and attribute vectors (rows broadcast)."""
    emb = embed(params, x)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != emb.shape[-1]:
        raise DimensionError("attribute dimension", emb.shape[-1], y.shape[-1])
    return np.linalg.norm((emb - y) @ params.W_A, axis=-1)


def hinge_loss(s, z, tau):
    return np.maximum(0.0, 1.0 - z * (tau - np.square(s)))


def attribute_loss(y, y_hat, z):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError("attribute vector shape", y.shape, y_hat.shape)
    return np.maximum(0.0, z) * np.sum(np.square(y - y_hat), axis=-1)


def regularizer(params):
    return float(np.sum(params.W_X ** 2) + np.sum(params.b_X ** 2) + np.sum(params.W_A ** 2))


# ---------------------------------------------------------------------------
# weighted pair objective
# ---------------------------------------------------------------------------

def pair_loss_and_grad(params, X, Y, z, weights, lam, reg_weight, need_grad=True):
    """Weighted loss over explicit pair rows and its gradient.

    Computes ``sum_i w_i * (l_H_i + lam * l_A_i) + reg_weight * R`` where
    ``l_A`` is already zero for negative pairs. Subgradients at hinge and
    ReLU kinks are taken as 0.

    Returns ``(value, grad)``; ``grad`` is a :class:`ModelParameters` or
    ``None`` when ``need_grad`` is false.
    """
    pre = X @ params.W_X + params.b_X
    emb = np.maximum(0.0, pre)
    diff = emb - Y
    proj = diff @ params.W_A
    s2 = np.einsum("ij,ij->i", proj, proj)
    margin = 1.0 - z * (params.tau - s2)
    hinge = np.maximum(0.0, margin)
    pos = np.maximum(0.0, z)
    attr = pos * np.einsum("ij,ij->i", diff, diff)

    value = float(weights @ hinge + lam * (weights @ attr) + reg_weight * regularizer(params))
    if not need_grad:
        return value, None

    # d(hinge)/d(s2) = z, d(hinge)/d(tau) = -z on the active side.
    active = margin > 0.0
    c_h = np.where(active, weights * z, 0.0)
    g_tau = -float(np.sum(c_h))
    g_proj = (2.0 * c_h)[:, None] * proj
    g_WA = diff.T @ g_proj
    g_emb = g_proj @ params.W_A.T + (2.0 * lam * weights * pos)[:, None] * diff
    g_pre = np.where(pre > 0.0, g_emb, 0.0)
    g_WX = X.T @ g_pre
    g_b = g_pre.sum(axis=0)

    grad = ModelParameters(
        g_WX + 2.0 * reg_weight * params.W_X,
        g_b + 2.0 * reg_weight * params.b_X,
        g_WA + 2.0 * reg_weight * params.W_A,
        g_tau,
    )
    return value, grad


def _stack(d_plus, d_minus, features):
    if len(d_plus) == 0:
        raise EmptyPairSetError("positive pair set D+ is empty")
    if len(d_minus) == 0:
        raise EmptyPairSetError("negative pair set D- is empty")
    features = np.asarray(features, dtype=np.float64)
    idx = np.concatenate([d_plus.image_index, d_minus.image_index])
    X = features[idx]
    Y = np.vstack([d_plus.attributes, d_minus.attributes])
    z = np.concatenate([d_plus.z, d_minus.z])
    w = np.concatenate([
        np.full(len(d_plus), 1.0 / len(d_plus)),
        np.full(len(d_minus), 1.0 / len(d_minus)),
    ])
    return X, Y, z, w


def _features_of(features):
    return getattr(features, "features", features)


def weighted_objective(params, hp, d_plus, d_minus, features):
    """Frequency-weighted criterion over positive and negative pairs.

    ``features`` is the full feature matrix (or a :class:`Dataset`) indexed by
    the pairs' ``image_index``.
    """
    X, Y, z, w = _stack(d_plus, d_minus, _features_of(features))
    params.check_features(X.shape[1])
    value, _ = pair_loss_and_grad(params, X, Y, z, w, hp.lam, hp.mu, need_grad=False)
    return value


def objective_gradient(params, hp, d_plus, d_minus, features):
    """Analytic (sub)gradient of :func:`weighted_objective`."""
    X, Y, z, w = _stack(d_plus, d_minus, _features_of(features))
    params.check_features(X.shape[1])
    return pair_loss_and_grad(params, X, Y, z, w, hp.lam, hp.mu)[1]


def unweighted_data_terms(params, hp, pairs, features):
    """Data part of the original (unweighted) criterion: sum of l_H + lam * l_A."""
    X = _features_of(features)[pairs.image_index]
    w = np.ones(len(pairs))
    value, _ = pair_loss_and_grad(params, X, pairs.attributes, pairs.z, w, hp.lam, 0.0, need_grad=False)
    return value


# ---------------------------------------------------------------------------
# finite-difference check
# ---------------------------------------------------------------------------

def finite_difference_gradient(params, hp, d_plus, d_minus, features, step=1e-5):
    """Central differences of the weighted objective, one coordinate at a time."""
    d, a, m = params.dims
    theta = params.flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        up = weighted_objective(ModelParameters.from_flat(theta, d, a, m), hp, d_plus, d_minus, features)
        theta[i] = orig - step
        down = weighted_objective(ModelParameters.from_flat(theta, d, a, m), hp, d_plus, d_minus, features)
        theta[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return out


def relative_error(analytic, numeric, floor=1e-5):
    """Coordinate-wise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps exactly-cancelling components (e.g. the threshold
    gradient when positive and negative weights balance) from dividing
    roundoff noise by zero; below it the check is absolute at ``tol * floor``.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def kink_margins(params, d_plus, d_minus, features):
    """Smallest distances of hinge and ReLU arguments from their kinks."""
    X, Y, z, _ = _stack(d_plus, d_minus, _features_of(features))
    pre = X @ params.W_X + params.b_X
    proj = (np.maximum(0.0, pre) - Y) @ params.W_A
    s2 = np.einsum("ij,ij->i", proj, proj)
    margin = 1.0 - z * (params.tau - s2)
    return float(np.min(np.abs(margin))), float(np.min(np.abs(pre)))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"ZSCMODL1"
_LEN = struct.Struct("<Q")


def save_model(path, params, metadata=None):
    """Write parameters as magic, JSON header length, JSON header, float64 payload.

    The payload holds ``W_X``, ``b_X`` and ``W_A`` in that order, row-major,
    little-endian. ``tau`` lives in the header (JSON floats round-trip
    exactly). ``metadata`` is embedded under ``"config"``.
    """
    d, a, m = params.dims
    header = {
        "format": "zscmine-model",
        "version": 1,
        "dims": {"d": d, "a": a, "m": m},
        "tau": params.tau,
        "arrays": ["W_X", "b_X", "W_A"],
        "config": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in (params.W_X, params.b_X, params.W_A)
    )
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        fh.write(payload)
    return path


def load_model(path, dataset=None):
    """Read a model file; returns ``(params, header)``.

    If ``dataset`` is given its feature and attribute dimensions are checked
    against the stored ``d`` and ``a``.
    """
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise DataError(f"{path}: not a zscmine model file")
    (hlen,) = _LEN.unpack_from(raw, 8)
    start = 8 + _LEN.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    dims = header["dims"]
    d, a, m = int(dims["d"]), int(dims["a"]), int(dims["m"])
    payload = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    if payload.size != d * a + a + a * m:
        raise DataError(f"{path}: payload holds {payload.size} values, dims imply {d * a + a + a * m}")
    vec = np.concatenate([payload.astype(np.float64), [header["tau"]]])
    params = ModelParameters.from_flat(vec, d, a, m)
    if dataset is not None:
        if dataset.d != d:
            raise DimensionError("model feature dimension d vs dataset", d, dataset.d)
        if dataset.a != a:
            raise DimensionError("model attribute dimension a vs dataset", a, dataset.a)
    return params, header
