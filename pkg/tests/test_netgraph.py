import math

import numpy as np
import pytest

from spxpool.errors import DimensionError, DivergenceError, ParameterError
from spxpool.metrics import oracle_accuracy
from spxpool.netgraph import (DenseLayer, SegHead, TopologyKind, gradcheck, head_backward,
                              head_forward, make_toy_dataset, max_pool_margin, predict,
                              random_instance, softmax_xent, train_toy)
from spxpool.tensor import FeatureImage, GridShape, LabelMap

KINDS = [TopologyKind.V1, TopologyKind.V2, TopologyKind.V3]


def test_head_branch_presence_is_validated():
    layer = DenseLayer(np.ones((2, 3)), np.zeros(2))
    with pytest.raises(ParameterError):
        SegHead(TopologyKind.V1, pixel_branch=None, sp_branch=layer)
    with pytest.raises(ParameterError):
        SegHead(TopologyKind.V3, pixel_branch=layer)
    with pytest.raises(DimensionError):
        DenseLayer(np.ones((2, 3)), np.zeros(3))


def test_init_is_seeded_and_bounded():
    a = SegHead.init("v3", 4, 3, seed=7)
    b = SegHead.init("v3", 4, 3, seed=7)
    for k in a.params():
        np.testing.assert_array_equal(a.params()[k], b.params()[k])
        assert np.abs(a.params()[k]).max() <= 0.5
    # paired runs share the pixel branch across topologies
    np.testing.assert_array_equal(SegHead.init("pixel", 4, 3, seed=7).pixel_branch.weights,
                                  a.pixel_branch.weights)


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_v1_identity_partition_equals_pixel_branch(mode, rng):
    x = rng.normal(size=(3, 12))
    seg = LabelMap(GridShape((3, 4)), np.arange(12))
    head = SegHead.init("v1", 3, 4, mode, seed=1)
    np.testing.assert_array_equal(head_forward(head, x, seg), head.pixel_branch.forward(x))


def test_v3_with_zero_superpixel_branch(rng):
    x = rng.normal(size=(3, 20))
    seg = LabelMap(GridShape((4, 5)), np.arange(20) // 5)
    head = SegHead.init("v3", 3, 2, seed=2)
    head.sp_branch = DenseLayer(np.zeros((2, 3)), np.zeros(2))
    np.testing.assert_array_equal(head_forward(head, x, seg), head.pixel_branch.forward(x))


def test_v3_is_sum_of_branches(rng):
    x = rng.normal(size=(2, 20))
    seg = LabelMap(GridShape((4, 5)), np.arange(20) // 3 % 4)
    v3 = SegHead.init("v3", 2, 3, seed=3)
    v2 = SegHead("v2", sp_branch=v3.sp_branch, pool_mode=v3.pool_mode)
    pixel = SegHead("pixel", pixel_branch=v3.pixel_branch)
    np.testing.assert_allclose(head_forward(v3, x, seg),
                               head_forward(v2, x, seg) + head_forward(pixel, x, seg), atol=1e-14)


def test_v2_single_superpixel_avg(rng):
    x = rng.normal(size=(3, 8))
    seg = LabelMap(GridShape((2, 4)), np.zeros(8))
    head = SegHead.init("v2", 3, 2, "avg", seed=4)
    means = x.mean(axis=1)
    expected = head.sp_branch.weights @ means + head.sp_branch.bias
    out = head_forward(head, x, seg)
    np.testing.assert_allclose(out, np.repeat(expected[:, None], 8, axis=1), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS + [TopologyKind.PIXEL])
@pytest.mark.parametrize("mode", ["max", "avg"])
def test_gradcheck_small_instance(kind, mode):
    rng = np.random.default_rng(11)
    head, x, seg, targets = random_instance(rng, kind, mode, dims=(4, 4), channels=3, labels=4)
    assert gradcheck(head, x, seg, targets) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_zero_upstream_gives_zero_gradients(kind, rng):
    head, x, seg, _ = random_instance(rng, kind, "max")
    gx, gp = head_backward(head, x, seg, np.zeros((2, seg.pixel_count)))
    assert not gx.any() and not any(g.any() for g in gp.values())


def test_v3_identity_partition_backward(rng):
    x = rng.normal(size=(3, 6))
    seg = LabelMap(GridShape((2, 3)), np.arange(6))
    head = SegHead.init("v3", 3, 2, "avg", seed=5)
    g = rng.normal(size=(2, 6))
    gx, _ = head_backward(head, x, seg, g)
    expected = head.pixel_branch.weights.T @ g + head.sp_branch.weights.T @ g
    np.testing.assert_allclose(gx, expected, atol=1e-12)


def test_head_dimension_errors(rng):
    head = SegHead.init("v2", 3, 2)
    seg = LabelMap(GridShape((2, 2)), [0, 0, 1, 1])
    with pytest.raises(DimensionError):
        head_forward(head, rng.normal(size=(2, 4)), seg)
    with pytest.raises(DimensionError):
        head_forward(head, rng.normal(size=(3, 5)), seg)
    with pytest.raises(DimensionError):
        head_backward(head, rng.normal(size=(3, 4)), seg, np.zeros((3, 4)))


def test_softmax_xent_values():
    loss, _ = softmax_xent(np.zeros((2, 5)), np.array([0, 1, 0, 1, 1]))
    assert loss == pytest.approx(math.log(2), rel=1e-12)
    scores = np.full((3, 4), -10.0)
    targets = np.array([0, 2, 1, 2])
    scores[targets, np.arange(4)] = 10.0
    assert softmax_xent(scores, targets)[0] < 1e-8
    with pytest.raises(ParameterError):
        softmax_xent(np.zeros((2, 3)), np.array([0, 2, 1]))


def test_softmax_xent_gradient(rng):
    scores = rng.normal(size=(4, 7))
    targets = rng.integers(0, 4, 7)
    _, grad = softmax_xent(scores, targets)
    h = 1e-5
    numeric = np.zeros_like(scores)
    for idx in np.ndindex(scores.shape):
        s = scores.copy()
        s[idx] += h
        up = softmax_xent(s, targets)[0]
        s[idx] -= 2 * h
        numeric[idx] = (up - softmax_xent(s, targets)[0]) / (2 * h)
    assert np.abs(numeric - grad).max() < 1e-5
    np.testing.assert_allclose(grad.sum(axis=0), 0, atol=1e-15)


def test_max_pool_margin():
    vals = np.array([[1.0, 3.0, 2.5, 0.0, 7.0]])
    assert max_pool_margin(vals, np.array([0, 0, 0, 1, 2])) == pytest.approx(0.5)
    assert max_pool_margin(vals, np.array([0, 1, 2, 3, 4])) == np.inf


def separable_dataset(seed=0):
    rng = np.random.default_rng(seed)
    shape = GridShape((8, 8))
    data = []
    for _ in range(3):
        truth = rng.integers(0, 2, 64)
        x = np.stack([2.0 * truth - 1.0, rng.normal(size=64)]) + 0.1 * rng.normal(size=(2, 64))
        seg = LabelMap(shape, np.arange(64) // 4)
        data.append((FeatureImage(shape, x), seg, truth))
    return data


def test_v3_learns_separable_data():
    result = train_toy(SegHead.init("v3", 2, 2, seed=0), separable_dataset(), 200, 1.0)
    assert result.final_accuracy >= 0.99
    assert result.losses[-1] < result.losses[0]
    assert len(result.losses) == len(result.accuracies) == 200


def test_zero_learning_rate_keeps_parameters():
    data = separable_dataset()
    head = SegHead.init("v3", 2, 2, seed=0)
    result = train_toy(head, data, 5, 0.0)
    for k, v in head.params().items():
        np.testing.assert_array_equal(result.head.params()[k], v)
    assert result.final_accuracy == result.accuracies[0]


def test_divergence_reports_step():
    data = separable_dataset()
    head = SegHead("pixel", pixel_branch=DenseLayer(np.full((2, 2), 1e308), [1e308, -1e308]))
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train_toy(head, data, 50, 0.1)
    assert info.value.step == 0


def test_v1_with_aligned_superpixels_beats_pixel_baseline():
    data = make_toy_dataset(4, seed=3)
    v1 = train_toy(SegHead.init("v1", 3, 2, seed=3), data, 100, 2.0)
    base = train_toy(SegHead.init("pixel", 3, 2, seed=3), data, 100, 2.0)
    assert v1.final_accuracy >= base.final_accuracy


def test_v1_never_beats_the_oracle(rng):
    for _ in range(20):
        head, x, seg, _ = random_instance(rng, "v1", rng.choice(["max", "avg"]), num_classes=3)
        truth = rng.integers(0, 3, seg.pixel_count)
        pred = predict(head, x, seg)
        assert np.mean(pred == truth) <= oracle_accuracy(seg, truth) + 1e-12


def test_toy_dataset_superpixels_respect_truth():
    for features, seg, truth in make_toy_dataset(3, seed=9):
        assert oracle_accuracy(seg, truth) == 1.0
        assert features.channels == 3
