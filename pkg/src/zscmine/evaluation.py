"""Zero-shot decision rule and per-class accuracy reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ClassDescriptorSet
from .errors import DataError, DimensionError
from .model import embed


def _as_descriptors(descriptors):
    if isinstance(descriptors, ClassDescriptorSet):
        return descriptors
    vectors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    return ClassDescriptorSet(np.arange(1, len(vectors) + 1), vectors)


def descriptor_distances(model, X, descriptors):
    """``(n_images, n_classes)`` matrix of similarities to each descriptor."""
    descriptors = _as_descriptors(descriptors)
    if len(descriptors) == 0:
        raise DataError("descriptor set is empty")
    if descriptors.a != model.dims[1]:
        raise DimensionError("descriptor attribute dimension", model.dims[1], descriptors.a)
    P = embed(model, np.atleast_2d(X)) @ model.W_A
    Q = descriptors.vectors @ model.W_A
    out = np.empty((P.shape[0], len(descriptors)))
    for k in range(len(descriptors)):
        out[:, k] = np.linalg.norm(P - Q[k], axis=1)
    return out


def classify_batch(model, X, descriptors):
    """Label of the nearest descriptor for every row of ``X``; ties go to the first."""
    descriptors = _as_descriptors(descriptors)
    dist = descriptor_distances(model, X, descriptors)
    return descriptors.labels[np.argmin(dist, axis=1)]


def classify(model, x, descriptors):
    """Label of the class whose descriptor is most similar to image ``x``."""
    return int(classify_batch(model, np.asarray(x, dtype=np.float64)[None, :], descriptors)[0])


def per_class_accuracy(true_labels, predicted, classes=None):
    """Fraction of correct predictions within each class.

    Raises :class:`DataError` if a requested class has no images.
    """
    true_labels = np.asarray(true_labels)
    predicted = np.asarray(predicted)
    if classes is None:
        classes = np.unique(true_labels)
    out = {}
    for k in classes:
        mask = true_labels == k
        if not mask.any():
            raise DataError(f"test class {int(k)} has no images")
        out[int(k)] = float(np.mean(predicted[mask] == k))
    return out


@dataclass
class EvalReport:
    per_class: dict
    mean: float
    std_over_runs: float = 0.0
    std_over_classes: float = 0.0
    n_runs: int = 1
    run_means: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def std(self):
        return self.std_over_runs

    @classmethod
    def from_per_class(cls, per_class, config=None):
        accs = np.array(list(per_class.values()), dtype=np.float64)
        mean = float(accs.mean())
        return cls(
            per_class=dict(per_class),
            mean=mean,
            std_over_runs=0.0,
            std_over_classes=float(accs.std()),
            n_runs=1,
            run_means=[mean],
            config=dict(config or {}),
        )

    def to_dict(self):
        out = asdict(self)
        out["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["per_class"] = {int(k): float(v) for k, v in data["per_class"].items()}
        return cls(**data)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def aggregate(reports, config=None):
    """Combine single-run reports: mean of run means, sample std across runs."""
    if not reports:
        raise ValueError("no reports to aggregate")
    means = np.array([r.mean for r in reports], dtype=np.float64)
    classes = list(reports[0].per_class)
    per_class = {k: float(np.mean([r.per_class[k] for r in reports])) for k in classes}
    std_runs = float(means.std(ddof=1)) if len(reports) > 1 else 0.0
    return EvalReport(
        per_class=per_class,
        mean=float(means.mean()),
        std_over_runs=std_runs,
        std_over_classes=float(np.std(list(per_class.values()))),
        n_runs=len(reports),
        run_means=[float(m) for m in means],
        config=dict(config or {}),
    )


def evaluate(model, dataset, descriptors=None, role="test", config=None):
    """Single-run zero-shot evaluation on the images of ``role`` classes."""
    test_classes = dataset.classes_with_role(role)
    if not test_classes:
        raise DataError(f"dataset has no {role} classes")
    train_classes = set(dataset.classes_with_role("train"))
    overlap = train_classes.intersection(test_classes)
    if overlap:
        raise DataError(f"classes {sorted(overlap)} are both training and {role} classes")
    if descriptors is None:
        descriptors = dataset.descriptors(role)
    model.check_features(dataset.d)
    for k in test_classes:
        if len(dataset.class_indices(k)) == 0:
            raise DataError(f"test class {k} has no images")
    idx = dataset.indices(role)
    predicted = classify_batch(model, dataset.features[idx], descriptors)
    per_class = per_class_accuracy(dataset.labels[idx], predicted, test_classes)
    return EvalReport.from_per_class(per_class, config)
