import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zscmine.data import (
    Dataset,
    SyntheticSpec,
    build_candidate_pool,
    generate_synthetic,
    load,
    min_pairwise_correlation,
    read_matrix,
    save,
    standardize,
    write_matrix,
)
from zscmine.errors import DataError, DimensionError

from conftest import FIXTURES, two_by_two


# --- matrix files --------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 5), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_matrix_roundtrip_float(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("m") / "a.zmat"
    write_matrix(path, arr)
    back = read_matrix(path)
    assert back.dtype == np.float64 and np.array_equal(back, arr)


def test_matrix_roundtrip_int_and_vector(tmp_path):
    write_matrix(tmp_path / "v.zmat", np.array([3, -1, 7]))
    back = read_matrix(tmp_path / "v.zmat")
    assert back.dtype == np.int64 and back.shape == (3, 1) and back.ravel().tolist() == [3, -1, 7]


def test_matrix_header_layout(tmp_path):
    write_matrix(tmp_path / "a.zmat", np.array([[1.5, 2.0]]))
    raw = (tmp_path / "a.zmat").read_bytes()
    assert raw[:4] == b"ZMAT" and raw[4:5] == b"f"
    assert int.from_bytes(raw[8:16], "little") == 1 and int.from_bytes(raw[16:24], "little") == 2
    assert np.frombuffer(raw[24:], "<f8").tolist() == [1.5, 2.0]


def test_matrix_rejects_corruption(tmp_path):
    path = tmp_path / "a.zmat"
    write_matrix(path, np.ones((2, 2)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DataError, match="payload"):
        read_matrix(path)
    path.write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(DataError, match="magic"):
        read_matrix(path)
    with pytest.raises(DataError, match="missing"):
        read_matrix(tmp_path / "absent.zmat")


# --- loading -------------------------------------------------------------------

def test_load_tiny_fixture(tiny_manifest):
    ds = load(tiny_manifest)
    assert ds.n == 4 and ds.d == 3 and ds.a == 2 and ds.num_classes == 3
    assert ds.roles == {1: "train", 2: "train", 3: "test"}
    assert ds.labels.tolist() == [1, 1, 2, 3]


def test_load_rejects_class_overlap():
    with pytest.raises(DataError, match="overlap"):
        load(FIXTURES / "overlap" / "manifest.json")


def test_load_checks_declared_dims(tmp_path, tiny_manifest):
    manifest = json.loads(tiny_manifest.read_text())
    manifest["dims"]["d"] = 5
    for name in ("features", "attributes", "labels", "split"):
        (tmp_path / manifest[name]).write_bytes((tiny_manifest.parent / manifest[name]).read_bytes())
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DimensionError):
        load(tmp_path / "manifest.json")


def test_load_reports_missing_keys(tmp_path):
    (tmp_path / "manifest.json").write_text("{}")
    with pytest.raises(DataError, match="features"):
        load(tmp_path / "manifest.json")


def test_save_load_roundtrip(tmp_path, small_task):
    path = save(small_task, tmp_path / "ds", extra={"generator": {"seed": 3}})
    back = load(path)
    assert np.array_equal(back.features, small_task.features)
    assert np.array_equal(back.attributes, small_task.attributes)
    assert np.array_equal(back.labels, small_task.labels)
    assert np.array_equal(back.class_descriptors, small_task.class_descriptors)
    assert back.roles == small_task.roles and back.normalized
    assert json.loads(path.read_text())["generator"] == {"seed": 3}


# --- dataset invariants ----------------------------------------------------------

def test_dataset_rejects_nonfinite_with_location():
    feats = np.zeros((2, 2))
    feats[1, 0] = np.nan
    with pytest.raises(DataError, match="row 1, column 0"):
        Dataset(feats, np.zeros((2, 1)), [1, 2], {1: "train", 2: "test"})


def test_dataset_rejects_label_out_of_range():
    with pytest.raises(DataError, match="label 3"):
        Dataset(np.zeros((2, 1)), np.zeros((2, 1)), [1, 3], {1: "train", 2: "test"})


def test_dataset_rejects_row_mismatch():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 1)), np.zeros((2, 1)), [1, 2], {1: "train", 2: "test"})


def test_descriptor_defaults_to_class_mean():
    ds = two_by_two()
    assert np.allclose(ds.descriptor(1), [0.95, 0.05])
    assert np.allclose(ds.descriptor(2), [0.05, 0.95])


# --- synthetic generator ------------------------------------------------------------

def test_generator_counts():
    ds = generate_synthetic(SyntheticSpec(C_total=20, C_test=5, images_per_class=30, d=32, a=16))
    assert ds.n == 600 and len(ds.indices("train")) == 450
    assert ds.classes_with_role("test") == [16, 17, 18, 19, 20]
    assert ds.d == 32 and ds.a == 16


def test_generator_zero_noise_identical_class_features():
    ds = generate_synthetic(SyntheticSpec(C_total=4, C_test=1, images_per_class=5, d=6, a=3,
                                          noise_sigma=0.0, attribute_noise_sigma=0.0))
    for k in ds.classes:
        idx = ds.class_indices(k)
        assert np.all(ds.features[idx] == ds.features[idx[0]])
        assert np.all(ds.attributes[idx] == ds.attributes[idx[0]])


def test_generator_is_deterministic():
    a = generate_synthetic(SyntheticSpec(seed=9))
    b = generate_synthetic(SyntheticSpec(seed=9))
    assert np.array_equal(a.features, b.features) and np.array_equal(a.attributes, b.attributes)


def test_generator_confusable_prototypes():
    ds = generate_synthetic(SyntheticSpec(min_prototype_correlation=0.8))
    assert min_pairwise_correlation(ds.class_descriptors) >= 0.8


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"C_test": 20}, "C_test"),
        ({"C_total": 0}, "C_total"),
        ({"noise_sigma": -1.0}, "noise_sigma"),
        ({"min_prototype_correlation": 1.5}, "min_prototype_correlation"),
    ],
)
def test_generator_rejects_invalid_spec(changes, field):
    with pytest.raises(DataError, match=field):
        generate_synthetic(SyntheticSpec(**changes))


def test_standardize_uses_training_statistics(small_task):
    raw = generate_synthetic(SyntheticSpec(C_total=8, C_test=3, images_per_class=6, d=8, a=5, seed=3))
    std = standardize(raw)
    train = std.features[std.indices("train")]
    assert np.allclose(train.mean(axis=0), 0, atol=1e-12) and np.allclose(train.std(axis=0), 1)
    assert standardize(std) is std
    assert np.array_equal(std.features, small_task.features)


# --- candidate pools -------------------------------------------------------------

def test_pool_two_classes_two_images():
    pool = build_candidate_pool(two_by_two())
    assert {i: c.tolist() for i, c in pool.per_image_candidates.items()} == {
        0: [2, 3], 1: [2, 3], 2: [0, 1], 3: [0, 1]}


def test_pool_needs_two_training_classes():
    ds = Dataset(np.zeros((2, 1)), np.zeros((2, 1)), [1, 2], {1: "train", 2: "test"})
    with pytest.raises(DataError, match="2 training classes"):
        build_candidate_pool(ds)


def test_pool_matches_enumeration_oracle(small_task):
    pool = build_candidate_pool(small_task)
    labels, roles = small_task.labels, small_task.roles
    for i in range(small_task.n):
        if roles[int(labels[i])] != "train":
            continue
        oracle = [j for j in range(small_task.n)
                  if roles[int(labels[j])] == "train" and labels[j] != labels[i]]
        assert pool.candidates(i).tolist() == oracle
    assert set(pool.class_sets) == set(small_task.classes_with_role("train"))


def test_pool_on_fixture(tiny_manifest):
    pool = build_candidate_pool(load(tiny_manifest))
    assert pool.candidates(0).tolist() == [2] and pool.candidates(2).tolist() == [0, 1]
