"""Datasets, on-disk formats, the synthetic task generator and candidate pools.

A dataset is a set of images, each described by a feature vector (e.g.
precomputed CNN activations) and an attribute vector, and labelled with a
class in ``1..C``. Every class plays exactly one role: ``train``,
``validation`` or ``test``. Zero-shot evaluation only ever scores images of
test classes against class descriptors, never against training classes.

On disk a dataset is a JSON manifest naming four matrix files; see
``docs/formats.md`` for the byte layout.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError

ROLES = ("train", "validation", "test")
ROLE_CODES = {name: code for code, name in enumerate(ROLES)}

MATRIX_MAGIC = b"ZMAT"
_DTYPE_TAGS = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8")}
_HEADER = struct.Struct("<4sc3xQQ")


# ---------------------------------------------------------------------------
# matrix files
# ---------------------------------------------------------------------------

def write_matrix(path, array):
    """Write a 1-D or 2-D float64/int64 array as a ``ZMAT`` matrix file.

    1-D arrays are stored as a single column.
    """
    arr = np.asarray(array)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError("matrix rank", "1 or 2", arr.ndim)
    if np.issubdtype(arr.dtype, np.integer):
        tag = b"i"
    elif np.issubdtype(arr.dtype, np.floating):
        tag = b"f"
    else:
        raise DataError(f"unsupported dtype {arr.dtype} for {path}")
    arr = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, tag, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_matrix(path, dtype=None):
    """Read a matrix file written by :func:`write_matrix`, or a CSV file.

    CSV files (``.csv`` suffix, comma separated, no header) are parsed with
    ``dtype`` (float64 unless given). Always returns a 2-D array.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    if path.suffix.lower() == ".csv":
        arr = np.loadtxt(path, delimiter=",", dtype=dtype or np.float64, ndmin=2)
        return arr
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, tag, rows, cols = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if tag not in _DTYPE_TAGS:
        raise DataError(f"{path}: unknown dtype tag {tag!r}")
    dt = _DTYPE_TAGS[tag]
    expected = _HEADER.size + rows * cols * dt.itemsize
    if len(raw) != expected:
        raise DataError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    arr = np.frombuffer(raw, dtype=dt, offset=_HEADER.size).reshape(rows, cols)
    arr = arr.astype(dt.newbyteorder("="))
    if dtype is not None:
        arr = arr.astype(dtype)
    return arr


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassDescriptorSet:
    """Attribute descriptors of candidate classes, ordered by class label."""

    labels: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if labels.ndim != 1 or labels.shape[0] != vectors.shape[0]:
            raise DimensionError("descriptor count", labels.shape[0], vectors.shape[0])
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "vectors", vectors)

    def __len__(self):
        return len(self.labels)

    @property
    def a(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Immutable zero-shot dataset.

    Parameters
    ----------
    features : (N, d) float64 array
    attributes : (N, a) float64 array
        Per-image attribute vectors.
    labels : (N,) int64 array
        Class labels in ``1..C``.
    roles : dict
        Maps every class label to one of ``"train"``, ``"validation"``,
        ``"test"``.
    class_descriptors : (C, a) float64 array, optional
        Explicit class-level descriptors, row ``k - 1`` for label ``k``. When
        absent, descriptors are the per-class mean attribute vectors.
    normalized : bool
        Whether features were standardized (recorded in the manifest).
    """

    features: np.ndarray
    attributes: np.ndarray
    labels: np.ndarray
    roles: dict
    class_descriptors: np.ndarray | None = None
    normalized: bool = False
    _by_class: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "attributes", np.asarray(self.attributes, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).ravel())
        object.__setattr__(self, "roles", {int(k): str(v) for k, v in dict(self.roles).items()})
        if self.class_descriptors is not None:
            object.__setattr__(
                self, "class_descriptors", np.asarray(self.class_descriptors, dtype=np.float64)
            )
        self.validate()
        for k in self.classes:
            self._by_class[k] = np.flatnonzero(self.labels == k)

    # shape ------------------------------------------------------------------
    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def a(self):
        return self.attributes.shape[1]

    @property
    def num_classes(self):
        return len(self.roles)

    @property
    def classes(self):
        return sorted(self.roles)

    def validate(self):
        """Check every structural invariant; raise :class:`DataError` on failure."""
        if self.features.ndim != 2 or self.attributes.ndim != 2:
            raise DataError("features and attributes must be 2-D matrices")
        n = self.features.shape[0]
        if self.attributes.shape[0] != n:
            raise DimensionError("attribute rows", n, self.attributes.shape[0])
        if self.labels.shape[0] != n:
            raise DimensionError("label count", n, self.labels.shape[0])
        for name, arr in (("features", self.features), ("attributes", self.attributes)):
            bad = np.argwhere(~np.isfinite(arr))
            if len(bad):
                r, c = bad[0]
                raise DataError(f"non-finite value in {name} at row {r}, column {c}")
        c_total = len(self.roles)
        if set(self.roles) != set(range(1, c_total + 1)):
            raise DataError(f"class roles must cover labels 1..{c_total}, got {sorted(self.roles)}")
        for k, role in self.roles.items():
            if role not in ROLE_CODES:
                raise DataError(f"class {k}: unknown role {role!r}")
        if n:
            lo, hi = int(self.labels.min()), int(self.labels.max())
            if lo < 1 or hi > c_total:
                row = int(np.argmax((self.labels < 1) | (self.labels > c_total)))
                raise DataError(f"label {self.labels[row]} at row {row} outside [1, {c_total}]")
        if self.class_descriptors is not None:
            cd = self.class_descriptors
            if cd.shape != (c_total, self.attributes.shape[1]):
                raise DimensionError("class descriptor shape", (c_total, self.attributes.shape[1]), cd.shape)
            if not np.all(np.isfinite(cd)):
                raise DataError("non-finite value in class descriptors")

    # role queries -------------------------------------------------------------
    def classes_with_role(self, role):
        return [k for k in self.classes if self.roles[k] == role]

    def class_indices(self, label):
        return self._by_class[int(label)]

    def indices(self, role):
        """Image indices whose class has ``role``, in ascending order."""
        wanted = self.classes_with_role(role)
        if not wanted:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(np.isin(self.labels, wanted))

    def descriptor(self, label):
        if self.class_descriptors is not None:
            return self.class_descriptors[int(label) - 1]
        idx = self.class_indices(label)
        if len(idx) == 0:
            raise DataError(f"class {label} has no images and no explicit descriptor")
        return self.attributes[idx].mean(axis=0)

    def descriptors(self, role="test"):
        labels = self.classes_with_role(role)
        vecs = np.array([self.descriptor(k) for k in labels]).reshape(len(labels), self.a)
        return ClassDescriptorSet(np.array(labels, dtype=np.int64), vecs)

    def with_roles(self, roles):
        return replace(self, roles=dict(roles), _by_class={})


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _split_matrix(roles):
    return np.array([[k, ROLE_CODES[r]] for k, r in sorted(roles.items())], dtype=np.int64).reshape(-1, 2)


def _roles_from_split(split, where):
    split = np.asarray(split, dtype=np.int64)
    if split.ndim != 2 or split.shape[1] != 2:
        raise DataError(f"{where}: split must have two columns (class, role code)")
    roles = {}
    for k, code in split:
        k, code = int(k), int(code)
        if code not in range(len(ROLES)):
            raise DataError(f"{where}: class {k} has unknown role code {code}")
        role = ROLES[code]
        if k in roles and roles[k] != role:
            pair = {roles[k], role}
            if "test" in pair:
                raise DataError(
                    f"{where}: class {k} is assigned to both {sorted(pair)[0]} and "
                    f"{sorted(pair)[1]} (train/test class overlap)"
                )
            raise DataError(f"{where}: class {k} is assigned conflicting roles {sorted(pair)}")
        roles[k] = role
    return roles


def load(manifest_path):
    """Load and validate a dataset from its JSON manifest.

    Matrix files are resolved relative to the manifest's directory. ``.csv``
    files are accepted in place of binary matrices.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("features", "attributes", "labels", "split"):
        if key not in manifest:
            raise DataError(f"{manifest_path}: manifest lacks '{key}'")
    base = manifest_path.parent
    features = read_matrix(base / manifest["features"], np.float64)
    attributes = read_matrix(base / manifest["attributes"], np.float64)
    labels = read_matrix(base / manifest["labels"], np.int64)
    if labels.ndim == 2 and labels.shape[1] != 1:
        raise DimensionError("labels columns", 1, labels.shape[1])
    roles = _roles_from_split(read_matrix(base / manifest["split"], np.int64), manifest_path)
    descriptors = None
    if manifest.get("class_descriptors"):
        descriptors = read_matrix(base / manifest["class_descriptors"], np.float64)

    dims = manifest.get("dims", {})
    actual = {"n": features.shape[0], "d": features.shape[1], "a": attributes.shape[1], "c": len(roles)}
    for key, value in dims.items():
        if key in actual and int(value) != actual[key]:
            raise DimensionError(f"manifest dims.{key}", int(value), actual[key])

    return Dataset(
        features=features,
        attributes=attributes,
        labels=labels.ravel(),
        roles=roles,
        class_descriptors=descriptors,
        normalized=bool(manifest.get("normalized", False)),
    )


def save(dataset, directory, extra=None):
    """Write ``dataset`` as ``manifest.json`` plus binary matrices into ``directory``.

    Returns the manifest path. ``extra`` is merged into the manifest (used to
    echo the generating configuration).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "features": "features.zmat",
        "attributes": "attributes.zmat",
        "labels": "labels.zmat",
        "split": "split.zmat",
    }
    write_matrix(directory / files["features"], dataset.features)
    write_matrix(directory / files["attributes"], dataset.attributes)
    write_matrix(directory / files["labels"], dataset.labels)
    write_matrix(directory / files["split"], _split_matrix(dataset.roles))
    manifest = dict(files)
    if dataset.class_descriptors is not None:
        manifest["class_descriptors"] = "class_descriptors.zmat"
        write_matrix(directory / manifest["class_descriptors"], dataset.class_descriptors)
    manifest["normalized"] = dataset.normalized
    manifest["dims"] = {"n": dataset.n, "d": dataset.d, "a": dataset.a, "c": dataset.num_classes}
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def standardize(dataset):
    """Per-dimension feature standardization using training-image statistics."""
    if dataset.normalized:
        return dataset
    train = dataset.features[dataset.indices("train")]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return replace(dataset, features=(dataset.features - mean) / std, normalized=True, _by_class={})


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic zero-shot task.

    ``min_prototype_correlation`` makes classes confusable: prototypes share
    a common component and are redrawn until every pair of prototypes has a
    Pearson correlation of at least this value.
    """

    C_total: int = 20
    C_test: int = 5
    images_per_class: int = 30
    d: int = 32
    a: int = 16
    noise_sigma: float = 0.05
    attribute_noise_sigma: float = 0.05
    seed: int = 0
    min_prototype_correlation: float | None = None

    def validate(self):
        for name in ("C_total", "C_test", "images_per_class", "d", "a"):
            if int(getattr(self, name)) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.C_test >= self.C_total:
            raise DataError(f"C_test must be < C_total, got C_test={self.C_test}, C_total={self.C_total}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.attribute_noise_sigma < 0:
            raise DataError(f"attribute_noise_sigma must be >= 0, got {self.attribute_noise_sigma}")
        rho = self.min_prototype_correlation
        if rho is not None and not 0 <= rho < 1:
            raise DataError(f"min_prototype_correlation must lie in [0, 1), got {rho}")


def min_pairwise_correlation(vectors):
    corr = np.corrcoef(vectors)
    iu = np.triu_indices(len(vectors), k=1)
    return float(corr[iu].min()) if len(iu[0]) else 1.0


def _prototypes(spec, rng):
    rho = spec.min_prototype_correlation
    if rho is None:
        return rng.uniform(0.0, 1.0, size=(spec.C_total, spec.a))
    # Mixing weight c gives expected correlation c^2 / (c^2 + (1-c)^2); aim
    # halfway between rho and 1 so that rejection rarely triggers.
    target = (1.0 + rho) / 2.0
    ratio = math.sqrt(target / (1.0 - target))
    c = ratio / (1.0 + ratio)
    for _ in range(1000):
        base = rng.uniform(0.0, 1.0, size=spec.a)
        own = rng.uniform(0.0, 1.0, size=(spec.C_total, spec.a))
        protos = c * base + (1.0 - c) * own
        if min_pairwise_correlation(protos) >= rho:
            return protos
    raise DataError(f"could not draw prototypes with pairwise correlation >= {rho}; increase a")


def generate_synthetic(spec=None):
    """Draw a linearly solvable zero-shot task.

    Class prototypes are uniform in ``[0, 1]^a``. Image attributes are the
    class prototype plus Gaussian noise; image features are ``prototype @ G.T``
    plus Gaussian noise for a fixed seeded ``(d, a)`` matrix ``G``. The last
    ``C_test`` classes are test classes and the prototypes are stored as the
    explicit class descriptors.
    """
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    protos = _prototypes(spec, rng)
    G = rng.normal(0.0, 1.0 / math.sqrt(spec.a), size=(spec.d, spec.a))

    labels = np.repeat(np.arange(1, spec.C_total + 1), spec.images_per_class)
    base = protos[labels - 1]
    attributes = base + rng.normal(0.0, 1.0, size=base.shape) * spec.attribute_noise_sigma
    features = base @ G.T + rng.normal(0.0, 1.0, size=(len(labels), spec.d)) * spec.noise_sigma

    n_train = spec.C_total - spec.C_test
    roles = {k: ("train" if k <= n_train else "test") for k in range(1, spec.C_total + 1)}
    return Dataset(features, attributes, labels, roles, class_descriptors=protos)


# ---------------------------------------------------------------------------
# candidate pools
# ---------------------------------------------------------------------------

@dataclass
class CandidatePool:
    """Negative candidates for every training image.

    A candidate is identified by its source image index; its attribute vector
    is ``dataset.attributes[source]``. Images of one class share a single
    candidate array (all training images of the other classes).
    """

    dataset: Dataset
    train_indices: np.ndarray
    class_sets: dict
    _by_class: dict

    def candidates(self, image_index):
        return self._by_class[int(self.dataset.labels[image_index])]

    @property
    def per_image_candidates(self):
        return {int(i): self.candidates(i) for i in self.train_indices}

    def size(self):
        return sum(len(self.candidates(i)) for i in self.train_indices)


def build_candidate_pool(dataset):
    """Candidate negatives restricted to training-role images of other classes."""
    train = dataset.indices("train")
    if len(train) == 0:
        raise DataError("training split is empty")
    train_classes = sorted({int(k) for k in dataset.labels[train]})
    if len(train_classes) < 2:
        raise DataError(
            f"need at least 2 training classes to form negative pairs, found {len(train_classes)}"
        )
    class_sets = {k: train[dataset.labels[train] == k] for k in train_classes}
    by_class = {k: train[dataset.labels[train] != k] for k in train_classes}
    return CandidatePool(dataset, train, class_sets, by_class)
