"""Segmentation scores and the superpixel oracle.

Per-class scores use NaN for classes absent from both prediction and truth;
the mean is taken over the remaining classes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import LabelMap


class ClassScores(NamedTuple):
    per_class: np.ndarray
    mean: float


def _flat_pair(pred, truth, num_classes: int):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.size != truth.size:
        raise DimensionError(f"prediction has {pred.size} pixels, truth has {truth.size}")
    for name, arr in (("prediction", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ParameterError(f"{name} labels must lie in [0, {num_classes - 1}]")
    return pred.astype(np.int64), truth.astype(np.int64)


def confusion_matrix(pred, truth, num_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts pixels of true class t predicted as p."""
    pred, truth = _flat_pair(pred, truth, num_classes)
    return np.bincount(truth * num_classes + pred,
                       minlength=num_classes ** 2).reshape(num_classes, num_classes)


def _scores(num, den) -> ClassScores:
    present = den > 0
    per_class = np.full(num.shape, np.nan)
    per_class[present] = num[present] / den[present]
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    return ClassScores(per_class, mean)


def dice(pred, truth, num_classes: int) -> ClassScores:
    cm = confusion_matrix(pred, truth, num_classes)
    inter = np.diag(cm).astype(np.float64)
    return _scores(2 * inter, cm.sum(0) + cm.sum(1))


def iou(pred, truth, num_classes: int) -> ClassScores:
    cm = confusion_matrix(pred, truth, num_classes)
    inter = np.diag(cm).astype(np.float64)
    return _scores(inter, cm.sum(0) + cm.sum(1) - inter)


def pixel_accuracy(pred, truth) -> float:
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.size != truth.size:
        raise DimensionError(f"prediction has {pred.size} pixels, truth has {truth.size}")
    return float(np.mean(pred == truth))


def oracle_labels(seg: LabelMap, truth) -> np.ndarray:
    """Majority ground-truth class of every superpixel, broadcast to its pixels.

    Ties go to the smaller class index.
    """
    truth = np.asarray(truth).reshape(-1).astype(np.int64)
    if truth.size != seg.pixel_count:
        raise DimensionError(f"truth has {truth.size} pixels, segmentation has {seg.pixel_count}")
    if truth.size and truth.min() < 0:
        raise ParameterError("truth labels must be non-negative")
    n_cls = int(truth.max()) + 1
    votes = np.bincount(seg.labels.astype(np.int64) * n_cls + truth,
                        minlength=seg.num_labels * n_cls).reshape(seg.num_labels, n_cls)
    return votes.argmax(axis=1)[seg.labels]


def oracle_dice(seg: LabelMap, truth, num_classes: int) -> float:
    return dice(oracle_labels(seg, truth), truth, num_classes).mean


def oracle_iou(seg: LabelMap, truth, num_classes: int) -> float:
    return iou(oracle_labels(seg, truth), truth, num_classes).mean


def oracle_accuracy(seg: LabelMap, truth) -> float:
    return pixel_accuracy(oracle_labels(seg, truth), truth)


def boundary_recall(seg: LabelMap, truth_grid, tolerance: int = 0) -> float:
    """Fraction of ground-truth boundary pixels that lie on a superpixel boundary.

    A pixel is a boundary pixel when a face neighbour carries a different
    label. ``tolerance`` dilates the superpixel boundary by that many pixels
    (chessboard distance).
    """
    truth_grid = np.asarray(truth_grid).reshape(seg.shape.dims)
    gt_edge = _edge_mask(truth_grid)
    sp_edge = _edge_mask(seg.grid())
    if tolerance > 0:
        from scipy.ndimage import binary_dilation
        sp_edge = binary_dilation(sp_edge, np.ones((3,) * sp_edge.ndim, bool), iterations=tolerance)
    if not gt_edge.any():
        return 1.0
    return float((gt_edge & sp_edge).sum() / gt_edge.sum())


def _edge_mask(grid: np.ndarray) -> np.ndarray:
    edge = np.zeros(grid.shape, dtype=bool)
    for axis in range(grid.ndim):
        n = grid.shape[axis]
        lo = np.take(grid, np.arange(n - 1), axis=axis)
        hi = np.take(grid, np.arange(1, n), axis=axis)
        diff = lo != hi
        pad_lo = [(0, 0)] * grid.ndim
        pad_hi = [(0, 0)] * grid.ndim
        pad_lo[axis] = (0, 1)
        pad_hi[axis] = (1, 0)
        edge |= np.pad(diff, pad_lo) | np.pad(diff, pad_hi)
    return edge
