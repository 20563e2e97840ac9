import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zscmine.errors import DataError, DimensionError, EmptyPairSetError
from zscmine.model import (
    Hyperparameters,
    ModelParameters,
    PairSet,
    attribute_loss,
    embed,
    finite_difference_gradient,
    hinge_loss,
    load_model,
    objective_gradient,
    regularizer,
    relative_error,
    save_model,
    similarity,
    unweighted_data_terms,
    weighted_objective,
)


def loop_embed(W, b, x):
    out = []
    for j in range(W.shape[1]):
        acc = b[j]
        for i in range(W.shape[0]):
            acc += x[i] * W[i, j]
        out.append(max(0.0, acc))
    return out


def loop_similarity(params, x, y):
    emb = loop_embed(params.W_X, params.b_X, x)
    diff = [e - v for e, v in zip(emb, y)]
    total = 0.0
    for k in range(params.W_A.shape[1]):
        acc = 0.0
        for j in range(len(diff)):
            acc += diff[j] * params.W_A[j, k]
        total += acc * acc
    return math.sqrt(total)


def random_params(rng, d=4, a=3, m=2, scale=0.7):
    return ModelParameters(
        rng.normal(0, scale, (d, a)), rng.normal(0, scale, a), rng.normal(0, scale, (a, m)), rng.normal(1, 0.2)
    )


# --- embed ------------------------------------------------------------------

def test_embed_zero_map():
    p = ModelParameters.zeros(3, 2, 2)
    assert np.array_equal(embed(p, np.array([1.0, -4.0, 9.0])), np.zeros(2))


def test_embed_relu_clamps_negatives():
    p = ModelParameters(np.eye(2), np.zeros(2), np.eye(2))
    assert np.array_equal(embed(p, np.array([1.0, -2.0])), np.array([1.0, 0.0]))


def test_embed_matches_loop_oracle(rng):
    p = random_params(rng, d=5, a=4)
    x = rng.normal(size=5)
    assert np.allclose(embed(p, x), loop_embed(p.W_X, p.b_X, x), rtol=0, atol=1e-14)


def test_embed_dimension_error_names_dims():
    p = ModelParameters.zeros(3, 2, 2)
    with pytest.raises(DimensionError) as info:
        embed(p, np.ones(4))
    assert info.value.expected == 3 and info.value.actual == 4


# --- similarity ---------------------------------------------------------------

def test_similarity_zero_when_embedding_equals_attributes():
    p = ModelParameters(np.eye(2), np.zeros(2), np.array([[2.0, 1.0], [0.5, 3.0]]))
    x = np.array([0.3, 0.8])
    assert similarity(p, x, x) == 0.0


def test_similarity_identity_metric_is_euclidean():
    p = ModelParameters(np.eye(2), np.zeros(2), np.eye(2))
    assert similarity(p, np.array([3.0, 4.0]), np.zeros(2)) == pytest.approx(5.0, abs=1e-15)


def test_similarity_matches_loop_oracle(rng):
    p = random_params(rng)
    x, y = rng.normal(size=4), rng.uniform(size=3)
    assert similarity(p, x, y) == pytest.approx(loop_similarity(p, x, y), rel=1e-13)


def test_similarity_dimension_error():
    p = ModelParameters.zeros(3, 2, 2)
    with pytest.raises(DimensionError):
        similarity(p, np.ones(3), np.ones(5))


# --- losses -------------------------------------------------------------------

@pytest.mark.parametrize(
    "s, z, tau, expected",
    [
        (0.0, +1, 1.0, 0.0),
        (math.sqrt(2.0), -1, 1.0, 0.0),
        (1.0, +1, 0.5, 1.5),
    ],
)
def test_hinge_loss_examples(s, z, tau, expected):
    assert hinge_loss(s, z, tau) == pytest.approx(expected, abs=1e-15)


def test_attribute_loss_examples():
    assert attribute_loss(np.array([3.0, -1.0]), np.array([0.0, 7.0]), -1) == 0.0
    assert attribute_loss(np.array([0.2, 0.4]), np.array([0.2, 0.4]), +1) == 0.0
    assert attribute_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]), +1) == 2.0


def test_attribute_loss_dimension_error():
    with pytest.raises(DimensionError):
        attribute_loss(np.ones(2), np.ones(3), 1)


def test_regularizer_examples(rng):
    assert regularizer(ModelParameters.zeros(2, 2, 2)) == 0.0
    p = ModelParameters(np.eye(2), np.zeros(2), np.zeros((2, 2)))
    assert regularizer(p) == 2.0
    q = random_params(rng)
    oracle = 0.0
    for arr in (q.W_X, q.b_X, q.W_A):
        for v in np.ravel(arr):
            oracle += float(v) * float(v)
    assert regularizer(q) == pytest.approx(oracle, rel=1e-14)


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 2, elements=finite), st.integers(0, 10**6))
def test_similarity_and_losses_non_negative(x, y, seed):
    p = random_params(np.random.default_rng(seed), d=3, a=2, m=2)
    s = similarity(p, x, y)
    assert s >= 0
    for z in (-1, 1):
        assert hinge_loss(s, z, p.tau) >= 0
        assert attribute_loss(y, embed(p, x), z) >= 0
    assert attribute_loss(y, embed(p, x), -1) == 0.0


@settings(max_examples=60, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 2, elements=finite),
       st.floats(0.01, 100), st.integers(0, 10**6))
def test_similarity_homogeneous_in_metric(x, y, c, seed):
    p = random_params(np.random.default_rng(seed), d=3, a=2, m=2)
    scaled = ModelParameters(p.W_X, p.b_X, c * p.W_A, p.tau)
    assert similarity(scaled, x, y) == pytest.approx(c * similarity(p, x, y), rel=1e-12, abs=1e-12)


# --- weighted objective -------------------------------------------------------

def test_objective_perfectly_fit_pair_is_regularizer_only():
    p = ModelParameters(np.eye(2), np.zeros(2), np.eye(2), tau=1.0)
    features = np.array([[0.5, 0.25], [0.5, 0.25]])
    pos = PairSet([0], [[0.5, 0.25]], [1])
    neg = PairSet([1], [[2.5, 0.25]], [-1])  # s^2 = 4 >= tau + 1
    hp = Hyperparameters(lam=0.7, mu=0.3)
    assert weighted_objective(p, hp, pos, neg, features) == pytest.approx(0.3 * regularizer(p), abs=1e-15)


def test_objective_balanced_sets_equal_unweighted_over_n(rng):
    p = random_params(rng)
    features = rng.normal(size=(10, 4))
    pos = PairSet(np.arange(5), rng.uniform(size=(5, 3)), np.ones(5))
    neg = PairSet(np.arange(5, 10), rng.uniform(size=(5, 3)), -np.ones(5))
    hp = Hyperparameters(lam=0.4, mu=0.2)
    allpairs = PairSet(np.arange(10), np.vstack([pos.attributes, neg.attributes]), np.r_[pos.z, neg.z])
    expected = unweighted_data_terms(p, hp, allpairs, features) / 5 + hp.mu * regularizer(p)
    assert weighted_objective(p, hp, pos, neg, features) == pytest.approx(expected, rel=1e-13)


def test_objective_hand_computed_two_pos_three_neg():
    p = ModelParameters(
        W_X=np.array([[1.0, 0.5], [-0.5, 1.0]]),
        b_X=np.array([0.1, -0.2]),
        W_A=np.array([[1.0], [2.0]]),
        tau=1.5,
    )
    features = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [2.0, 1.0], [1.0, 1.0]])
    pos = PairSet([0, 1], [[1.0, 0.5], [0.0, 0.0]], [1, 1])
    neg = PairSet([2, 3, 4], [[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]], [-1, -1, -1])
    hp = Hyperparameters(lam=0.5, mu=0.1)

    # scalar-by-scalar
    def emb(x):
        return [max(0.0, x[0] * 1.0 + x[1] * -0.5 + 0.1), max(0.0, x[0] * 0.5 + x[1] * 1.0 - 0.2)]

    def s2(x, y):
        e = emb(x)
        v = (e[0] - y[0]) * 1.0 + (e[1] - y[1]) * 2.0
        return v * v

    def lh(x, y, z):
        return max(0.0, 1.0 - z * (1.5 - s2(x, y)))

    def la(x, y):
        e = emb(x)
        return (y[0] - e[0]) ** 2 + (y[1] - e[1]) ** 2

    pos_sum = sum(lh(features[i], y, 1) + 0.5 * la(features[i], y) for i, y in [(0, [1.0, 0.5]), (1, [0.0, 0.0])])
    neg_sum = sum(lh(features[i], y, -1) for i, y in [(2, [0.0, 0.0]), (3, [1.0, 1.0]), (4, [0.5, 0.5])])
    R = 1 + 0.25 + 0.25 + 1 + 0.01 + 0.04 + 1 + 4
    expected = pos_sum / 2 + neg_sum / 3 + 0.1 * R
    assert weighted_objective(p, hp, pos, neg, features) == pytest.approx(expected, rel=1e-14)


def test_objective_empty_set_errors(rng):
    p = random_params(rng)
    features = rng.normal(size=(3, 4))
    pos = PairSet([0], rng.uniform(size=(1, 3)), [1])
    empty = PairSet(np.zeros(0, int), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(EmptyPairSetError):
        weighted_objective(p, Hyperparameters(), pos, empty, features)
    with pytest.raises(EmptyPairSetError):
        objective_gradient(p, Hyperparameters(), empty, pos, features)


# --- gradient -----------------------------------------------------------------

def _satisfied_problem():
    p = ModelParameters(np.eye(2), np.full(2, 0.5), np.eye(2), tau=2.0)
    features = np.array([[0.1, 0.2], [0.3, 0.1], [0.2, 0.2]])
    # positives: embed = x + 0.5, attributes chosen at s^2 = 0.01 <= tau - 1
    pos = PairSet([0, 1], [[0.6, 0.8], [0.8, 0.5]], [1, 1])
    # negative: s^2 = 9 >= tau + 1
    neg = PairSet([2], [[3.7, 0.7]], [-1])
    return p, features, pos, neg


def test_gradient_zero_in_flat_region():
    p, features, pos, neg = _satisfied_problem()
    g = objective_gradient(p, Hyperparameters(lam=0.0, mu=0.0), pos, neg, features)
    assert np.array_equal(g.flat(), np.zeros_like(g.flat()))


def test_gradient_pure_regularizer():
    p, features, pos, neg = _satisfied_problem()
    mu = 0.25
    g = objective_gradient(p, Hyperparameters(lam=0.0, mu=mu), pos, neg, features)
    assert np.allclose(g.W_X, 2 * mu * p.W_X) and np.allclose(g.b_X, 2 * mu * p.b_X)
    assert np.allclose(g.W_A, 2 * mu * p.W_A) and g.tau == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    from zscmine.gradcheck import random_problem

    prob = random_problem(np.random.default_rng(seed))
    analytic = objective_gradient(prob.params, prob.hp, prob.d_plus, prob.d_minus, prob.features).flat()
    numeric = finite_difference_gradient(prob.params, prob.hp, prob.d_plus, prob.d_minus, prob.features, 1e-5)
    assert relative_error(analytic, numeric).max() < 1e-4


def test_gradient_subgradient_zero_at_relu_kink():
    # pre-activation exactly 0 for the only image: the W_X/b_X gradient uses the 0 branch
    p = ModelParameters(np.array([[1.0]]), np.array([-1.0]), np.array([[1.0]]), tau=1.0)
    features = np.array([[1.0], [1.0]])
    pos = PairSet([0], [[0.5]], [1])
    neg = PairSet([1], [[0.25]], [-1])
    g = objective_gradient(p, Hyperparameters(lam=1.0, mu=0.0), pos, neg, features)
    assert g.W_X[0, 0] == 0.0 and g.b_X[0] == 0.0


# --- parameters and persistence -------------------------------------------------

def test_initialization_statistics():
    p = ModelParameters.initialize(200, 50, 40, np.random.default_rng(0))
    assert p.tau == 1.0 and np.all(p.b_X == 0)
    assert abs(p.W_X.std() - 0.01) < 5e-4 and abs(p.W_A.mean()) < 5e-4


def test_flat_roundtrip(rng):
    p = random_params(rng)
    q = ModelParameters.from_flat(p.flat(), *p.dims)
    assert np.array_equal(p.flat(), q.flat())


def test_model_file_roundtrip_exact(tmp_path, rng):
    p = random_params(rng, d=5, a=3, m=4)
    path = save_model(tmp_path / "m.zscm", p, {"seed": 7})
    q, header = load_model(path)
    assert np.array_equal(p.flat(), q.flat())
    assert header["dims"] == {"d": 5, "a": 3, "m": 4} and header["config"] == {"seed": 7}


def test_model_file_layout(tmp_path):
    p = ModelParameters(np.ones((1, 1)), np.array([2.0]), np.array([[3.0]]), tau=0.5)
    raw = save_model(tmp_path / "m.zscm", p).read_bytes()
    assert raw[:8] == b"ZSCMODL1"
    hlen = int.from_bytes(raw[8:16], "little")
    assert np.array_equal(np.frombuffer(raw[16 + hlen:], "<f8"), [1.0, 2.0, 3.0])


def test_model_load_checks_dataset_dims(tmp_path, small_task, rng):
    p = random_params(rng, d=small_task.d + 1, a=small_task.a, m=2)
    path = save_model(tmp_path / "m.zscm", p)
    with pytest.raises(DimensionError):
        load_model(path, dataset=small_task)


def test_model_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.zscm"
    path.write_bytes(b"not a model")
    with pytest.raises(DataError):
        load_model(path)


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        Hyperparameters(lam=-1)
    with pytest.raises(ValueError):
        Hyperparameters(m=0)
    with pytest.raises(ValueError):
        Hyperparameters(neg_ratio=0)
