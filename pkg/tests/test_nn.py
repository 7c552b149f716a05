import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from fedclust.data import LabeledDataset
from fedclust.nn import (
    LayerParams,
    ModelParams,
    PartialWeights,
    TrainSpec,
    accuracy,
    extract_partial_weights,
    final_layer_param_count,
    forward,
    init_model,
    local_train,
    loss_and_grad,
    param_count,
    weighted_average,
)

from conftest import random_model
from oracles import finite_difference, loop_average, loop_forward, max_rel_error


# ---- forward --------------------------------------------------------------

def test_zero_model_gives_uniform_softmax():
    m = ModelParams([LayerParams(np.zeros((5, 3)), np.zeros(5)), LayerParams(np.zeros((4, 5)), np.zeros(4))])
    x = np.random.default_rng(0).standard_normal((6, 3))
    logits = forward(m, x)
    assert_array_equal(logits, 0.0)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert_allclose(p, 0.25)


def test_identity_layer_passes_input_through():
    m = ModelParams([LayerParams(np.eye(4), np.zeros(4))])
    x = np.random.default_rng(1).standard_normal((3, 4))
    assert_array_equal(forward(m, x), x)


def test_forward_matches_loop_oracle(rng):
    m = random_model(rng, [5, 7, 3])
    x = rng.standard_normal((4, 5))
    assert_allclose(forward(m, x), loop_forward(m, x), rtol=0, atol=1e-12)


def test_forward_rejects_wrong_dimension(small_model):
    with pytest.raises(ValueError, match="fan_in"):
        forward(small_model, np.zeros((2, 5)))


def test_model_rejects_incompatible_layers():
    with pytest.raises(ValueError, match="fan_in"):
        ModelParams([LayerParams(np.zeros((3, 2)), np.zeros(3)), LayerParams(np.zeros((2, 4)), np.zeros(2))])
    with pytest.raises(ValueError):
        LayerParams(np.zeros((3, 2)), np.zeros(2))


# ---- loss and gradients ---------------------------------------------------

def test_uniform_logits_two_classes_cost_ln2():
    m = ModelParams([LayerParams(np.zeros((2, 3)), np.zeros(2))])
    loss, _ = loss_and_grad(m, np.ones((5, 3)), np.array([0, 1, 0, 1, 1]))
    assert loss == pytest.approx(np.log(2), abs=1e-15)


def test_mu_zero_is_plain_cross_entropy(rng):
    m = random_model(rng, [4, 5, 3])
    anchor = random_model(rng, [4, 5, 3])
    x, y = rng.standard_normal((8, 4)), rng.integers(0, 3, 8)
    l0, g0 = loss_and_grad(m, x, y)
    l1, g1 = loss_and_grad(m, x, y, anchor, 0.0)
    assert l0 == l1
    assert g0.equals(g1)


def test_gradient_matches_finite_differences(rng):
    m = random_model(rng, [4, 5, 3], scale=0.7)
    anchor = random_model(rng, [4, 5, 3], scale=0.7)
    x, y = rng.standard_normal((8, 4)), rng.integers(0, 3, 8)
    _, g = loss_and_grad(m, x, y, anchor, 0.1)
    assert max_rel_error(g, finite_difference(m, x, y, anchor, 0.1)) < 1e-4


def test_proximal_term_value(rng):
    m = random_model(rng, [3, 2])
    anchor = random_model(rng, [3, 2])
    x, y = rng.standard_normal((4, 3)), rng.integers(0, 2, 4)
    base, _ = loss_and_grad(m, x, y)
    prox, _ = loss_and_grad(m, x, y, anchor, 0.3)
    assert prox - base == pytest.approx(0.15 * np.sum((m.flat() - anchor.flat()) ** 2), rel=1e-12)


def test_label_out_of_range_rejected(small_model):
    with pytest.raises(ValueError, match="labels"):
        loss_and_grad(small_model, np.zeros((2, 4)), np.array([0, 3]))


def test_mu_without_anchor_rejected(small_model):
    with pytest.raises(ValueError, match="anchor"):
        loss_and_grad(small_model, np.zeros((2, 4)), np.array([0, 1]), None, 0.1)


# ---- local training -------------------------------------------------------

@pytest.fixture
def blobs():
    # centers 8 apart with noise bounded by 1 per axis: separable with margin
    rng = np.random.default_rng(3)
    y = np.repeat([0, 1], 50)
    x = np.where(y[:, None] == 0, -4.0, 4.0) * np.array([1.0, 0.0]) + rng.uniform(-1, 1, (100, 2))
    return LabeledDataset(x, y, 2)


def test_zero_learning_rate_is_null_step(blobs):
    m = init_model([2, 6, 2], seed=0)
    out = local_train(m, blobs, TrainSpec(epochs=3, learning_rate=0.0, momentum=0.9))
    assert out.equals(m)
    assert out is not m


def test_separable_blobs_fit_perfectly(blobs):
    m = init_model([2, 2], seed=0)
    out = local_train(m, blobs, TrainSpec(epochs=10, batch_size=10, learning_rate=0.1, momentum=0.5))
    assert accuracy(out, blobs) == 1.0


def test_local_train_deterministic_and_pure(blobs):
    m = init_model([2, 6, 2], seed=0)
    before = m.copy()
    spec = TrainSpec(epochs=2, seed=99)
    a = local_train(m, blobs, spec)
    b = local_train(m, blobs, spec)
    assert a.equals(b)
    assert m.equals(before)
    assert not local_train(m, blobs, spec.with_seed(100)).equals(a)


def test_local_train_keeps_last_partial_batch():
    # 3 samples, batch 2: a dropped tail would leave sample order-dependent params
    ds = LabeledDataset(np.array([[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]]), np.array([0, 1, 1]), 2)
    m = ModelParams([LayerParams(np.zeros((2, 2)), np.zeros(2))])
    spec = TrainSpec(epochs=1, batch_size=2, learning_rate=0.1, momentum=0.0, seed=0)
    out = local_train(m, ds, spec)
    order = np.random.default_rng(0).permutation(3)
    ref = m.copy()
    for idx in (order[:2], order[2:]):
        _, g = loss_and_grad(ref, ds.features[idx], ds.labels[idx])
        for p, gl in zip(ref.layers, g.layers):
            p.weights -= 0.1 * gl.weights
            p.bias -= 0.1 * gl.bias
    assert out.equals(ref)


def test_fedprox_anchor_is_received_model(blobs):
    m = init_model([2, 4, 2], seed=5)
    free = local_train(m, blobs, TrainSpec(epochs=5, learning_rate=0.1, seed=1))
    tied = local_train(m, blobs, TrainSpec(epochs=5, learning_rate=0.1, proximal_mu=10.0, seed=1))
    assert np.linalg.norm(tied.flat() - m.flat()) < np.linalg.norm(free.flat() - m.flat())


def test_empty_shard_rejected():
    ds = LabeledDataset(np.zeros((0, 2)), np.zeros(0, int), 2)
    with pytest.raises(ValueError, match="empty"):
        local_train(init_model([2, 2], 0), ds, TrainSpec())


# ---- introspection --------------------------------------------------------

def test_partial_weights_layout():
    W = np.arange(6.0).reshape(3, 2)
    b = np.array([10.0, 11.0, 12.0])
    m = ModelParams([LayerParams(np.ones((2, 4)), np.ones(2)), LayerParams(W, b)])
    pw = extract_partial_weights(m)
    assert pw.values.shape == (9,)
    assert_array_equal(pw.values, [0, 1, 2, 3, 4, 5, 10, 11, 12])
    back = pw.to_layer()
    assert_array_equal(back.weights, W)
    assert_array_equal(back.bias, b)


def test_partial_weights_zero_and_hidden_independent(rng):
    m = init_model([4, 8, 3], 0)
    m.layers[-1] = LayerParams(np.zeros((3, 8)), np.zeros(3))
    assert_array_equal(extract_partial_weights(m).values, 0.0)
    other = m.copy()
    other.layers[0].weights += 1.0
    assert_array_equal(extract_partial_weights(other).values, extract_partial_weights(m).values)


def test_partial_weights_length_checked():
    with pytest.raises(ValueError):
        PartialWeights(np.zeros(8), (3, 2))


def test_param_counts(small_model):
    assert param_count(small_model) == (8 * 4 + 8) + (3 * 8 + 3) == 67
    assert final_layer_param_count(small_model) == 27
    single = init_model([5, 4], 0)
    assert param_count(single) == final_layer_param_count(single) == 24


def test_init_model_glorot_bounds():
    m = init_model([16, 32, 10], seed=7)
    for layer in m.layers:
        fan_out, fan_in = layer.shape
        assert np.abs(layer.weights).max() <= np.sqrt(6 / (fan_in + fan_out))
        assert_array_equal(layer.bias, 0.0)


# ---- averaging ------------------------------------------------------------

def test_average_identical_models_exact(small_model):
    avg = weighted_average([small_model, small_model.copy(), small_model.copy()], [1, 2, 7])
    assert avg.equals(small_model)


def test_average_midpoint(rng):
    a, b = random_model(rng, [3, 4, 2]), random_model(rng, [3, 4, 2])
    assert_allclose(weighted_average([a, b], [1, 1]).flat(), (a.flat() + b.flat()) / 2, rtol=0, atol=1e-15)


def test_average_matches_loop_oracle(rng):
    ms = [random_model(rng, [3, 4, 2]) for _ in range(3)]
    assert_allclose(weighted_average(ms, [1, 2, 3]).flat(), loop_average([m.flat() for m in ms], [1, 2, 3]), rtol=0, atol=1e-12)


def test_average_rejects_bad_weights(small_model):
    with pytest.raises(ValueError):
        weighted_average([small_model, small_model], [0, 0])
    with pytest.raises(ValueError):
        weighted_average([], [])
    with pytest.raises(ValueError):
        weighted_average([small_model, init_model([4, 3], 0)], [1, 1])


def test_average_skips_zero_weight(rng):
    a, b = random_model(rng, [3, 2]), random_model(rng, [3, 2])
    assert weighted_average([a, b], [0, 5]).equals(b)


# ---- properties -----------------------------------------------------------

dims = st.integers(1, 8)


@settings(max_examples=25, deadline=None)
@given(d=dims, hidden=dims, c=st.integers(2, 8), batch=st.integers(1, 16),
       mu=st.sampled_from([0.0, 0.1]), seed=st.integers(0, 2**32 - 1))
def test_gradient_exactness_property(d, hidden, c, batch, mu, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, [d, hidden, c], scale=0.8)
    anchor = random_model(rng, [d, hidden, c], scale=0.8)
    x, y = rng.standard_normal((batch, d)), rng.integers(0, c, batch)
    _, g = loss_and_grad(m, x, y, anchor, mu)
    assert max_rel_error(g, finite_difference(m, x, y, anchor, mu)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 5), scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**32 - 1))
def test_average_scale_invariant(k, scale, seed):
    rng = np.random.default_rng(seed)
    ms = [random_model(rng, [3, 4, 2]) for _ in range(k)]
    w = rng.uniform(0.1, 5, k)
    assert_allclose(weighted_average(ms, w).flat(), weighted_average(ms, w * scale).flat(), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
def test_average_permutation_equivariant(k, seed):
    rng = np.random.default_rng(seed)
    ms = [random_model(rng, [3, 4, 2]) for _ in range(k)]
    w = rng.uniform(0, 5, k)
    w[0] = 1.0
    perm = rng.permutation(k)
    a = weighted_average(ms, w).flat()
    b = weighted_average([ms[i] for i in perm], w[perm]).flat()
    assert_allclose(a, b, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_partial_weights_commute_with_averaging(k, seed):
    rng = np.random.default_rng(seed)
    ms = [random_model(rng, [3, 4, 2]) for _ in range(k)]
    w = list(rng.uniform(0.1, 5, k))
    left = extract_partial_weights(weighted_average(ms, w)).values
    right = loop_average([m.layers[-1].flat() for m in ms], w)
    assert_allclose(left, right, rtol=0, atol=1e-12)
