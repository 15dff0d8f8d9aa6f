import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as nps

from spxpool.errors import DimensionError, ParameterError
from spxpool.metrics import (boundary_recall, dice, iou, oracle_accuracy, oracle_dice,
                             oracle_labels, pixel_accuracy)
from spxpool.tensor import GridShape, LabelMap, relabel_contiguous


def test_dice_examples():
    d = dice([0, 0, 1, 1], [0, 1, 1, 1], 2)
    np.testing.assert_allclose(d.per_class, [2 / 3, 0.8])
    assert d.mean == pytest.approx((2 / 3 + 0.8) / 2)
    assert dice([2, 1, 0], [2, 1, 0], 3).per_class.tolist() == [1.0, 1.0, 1.0]
    assert dice([0, 0], [1, 1], 2).per_class.tolist() == [0.0, 0.0]


def test_iou_examples():
    j = iou([0, 0, 1, 1], [0, 1, 1, 1], 2)
    np.testing.assert_allclose(j.per_class, [0.5, 2 / 3])
    assert iou([1, 1], [1, 1], 2).mean == 1.0


def test_absent_classes_are_excluded():
    d = dice([0, 0, 2], [0, 0, 2], 4)
    assert np.isnan(d.per_class[1]) and np.isnan(d.per_class[3])
    assert d.mean == 1.0


def test_metric_errors():
    with pytest.raises(DimensionError):
        dice([0, 1], [0], 2)
    with pytest.raises(ParameterError):
        iou([0, 3], [0, 1], 2)


labelings = st.integers(1, 40).flatmap(
    lambda n: st.tuples(nps.arrays(np.int64, n, elements=st.integers(0, 3)),
                        nps.arrays(np.int64, n, elements=st.integers(0, 3))))


@given(labelings, st.randoms())
def test_metric_properties(pair, random):
    pred, truth = pair
    for fn in (dice, iou):
        a, b = fn(pred, truth, 4), fn(truth, pred, 4)
        np.testing.assert_array_equal(a.per_class, b.per_class)
        ok = ~np.isnan(a.per_class)
        assert ((a.per_class[ok] >= 0) & (a.per_class[ok] <= 1)).all()
        perm = list(range(pred.size))
        random.shuffle(perm)
        c = fn(pred[perm], truth[perm], 4)
        np.testing.assert_array_equal(a.per_class, c.per_class)
    d, j = dice(pred, truth, 4).per_class, iou(pred, truth, 4).per_class
    ok = ~np.isnan(d)
    assert (j[ok] <= d[ok] + 1e-12).all()
    np.testing.assert_allclose(d[ok], 2 * j[ok] / (1 + j[ok]))


def test_oracle_examples():
    seg = LabelMap(GridShape((1, 3)), [0, 0, 0])
    assert oracle_labels(seg, [0, 0, 1]).tolist() == [0, 0, 0]
    ident = LabelMap(GridShape((2, 3)), np.arange(6))
    truth = np.array([2, 0, 1, 1, 0, 2])
    assert oracle_labels(ident, truth).tolist() == truth.tolist()
    assert oracle_dice(ident, truth, 3) == 1.0
    seg = relabel_contiguous([3, 1, 1, 4, 4, 3], (2, 3))
    assert oracle_labels(seg, np.full(6, 2)).tolist() == [2] * 6


def test_oracle_dice_single_superpixel_tie():
    seg = LabelMap(GridShape((1, 4)), [0, 0, 0, 0])
    labels = oracle_labels(seg, [0, 0, 1, 1])
    assert labels.tolist() == [0, 0, 0, 0]
    d = dice(labels, [0, 0, 1, 1], 2)
    np.testing.assert_allclose(d.per_class, [2 / 3, 0.0])
    assert oracle_dice(seg, [0, 0, 1, 1], 2) == pytest.approx(1 / 3)


def test_oracle_shape_mismatch():
    with pytest.raises(DimensionError):
        oracle_labels(LabelMap(GridShape((1, 2)), [0, 1]), [0, 1, 1])


def exhaustive_best_accuracy(seg, truth, n_cls):
    best = 0.0
    for assignment in itertools.product(range(n_cls), repeat=seg.num_labels):
        pred = np.array(assignment)[seg.labels]
        best = max(best, pixel_accuracy(pred, truth))
    return best


@given(st.integers(1, 9), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 31))
def test_oracle_is_optimal_by_enumeration(P, K, n_cls, seed):
    K = min(K, P)
    rng = np.random.default_rng(seed)
    raw = np.concatenate([np.arange(K), rng.integers(0, K, P - K)])
    rng.shuffle(raw)
    seg = LabelMap(GridShape((1, P)), raw, K)
    truth = rng.integers(0, n_cls, P)
    assert oracle_accuracy(seg, truth) == pytest.approx(exhaustive_best_accuracy(seg, truth, n_cls))


@given(st.integers(2, 30), st.integers(0, 2 ** 31))
def test_refinement_never_lowers_oracle_accuracy(P, seed):
    rng = np.random.default_rng(seed)
    coarse = rng.integers(0, max(1, P // 4), P)
    fine = coarse * 7 + rng.integers(0, 7, P)  # splits every coarse superpixel
    truth = rng.integers(0, 3, P)
    a = oracle_accuracy(relabel_contiguous(coarse, (1, P)), truth)
    b = oracle_accuracy(relabel_contiguous(fine, (1, P)), truth)
    assert b >= a


def test_boundary_recall():
    truth = np.zeros((6, 6), int)
    truth[:, 3:] = 1
    aligned = LabelMap(GridShape((6, 6)), truth.ravel())
    assert boundary_recall(aligned, truth) == 1.0
    shifted = np.zeros((6, 6), int)
    shifted[:, 2:] = 1
    off = LabelMap(GridShape((6, 6)), shifted.ravel())
    assert boundary_recall(off, truth) == 0.5
    assert boundary_recall(off, truth, tolerance=1) == 1.0
