"""Segmentation heads that put the pooling layer inside a network.

A head maps per-pixel features ``(C, P)`` to per-pixel class scores. The
topologies:

* ``PIXEL``: dense layer per pixel only (the baseline without superpixels).
* ``V1``: dense layer per pixel, then pool and unpool the class scores.
* ``V2``: pool the features, dense layer per superpixel, unpool.
* ``V3``: sum of the per-pixel branch and the V2 branch.

Everything here runs in float64 so that finite-difference checks are
meaningful; the backbone is replaced by precomputed feature arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError
from .metrics import pixel_accuracy
from .pooling import (pool_arrays, pool_backward_arrays, unpool_arrays,
                      unpool_backward_arrays)
from .superpixels import block_segment, enforce_connectivity
from .tensor import FeatureImage, GridShape, LabelMap, relabel_contiguous


class TopologyKind(str, Enum):
    PIXEL = "pixel"
    V1 = "v1"
    V2 = "v2"
    V3 = "v3"

    @property
    def uses_pixel_branch(self) -> bool:
        return self in (TopologyKind.PIXEL, TopologyKind.V1, TopologyKind.V3)

    @property
    def uses_sp_branch(self) -> bool:
        return self in (TopologyKind.V2, TopologyKind.V3)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.size != self.weights.shape[0]:
            raise DimensionError(
                f"bias of length {self.bias.size} for weights {self.weights.shape}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ParameterError("dense layer parameters must be finite")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        bound = 1.0 / np.sqrt(in_dim)
        return cls(rng.uniform(-bound, bound, (out_dim, in_dim)),
                   rng.uniform(-bound, bound, out_dim))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.in_dim:
            raise DimensionError(f"dense layer expects {self.in_dim} inputs, got {x.shape[0]}")
        return self.weights @ x + self.bias[:, None]

    def backward(self, x: np.ndarray, grad: np.ndarray):
        """Returns ``(grad_x, grad_weights, grad_bias)``."""
        return self.weights.T @ grad, grad @ x.T, grad.sum(axis=1)


@dataclass
class SegHead:
    kind: TopologyKind
    pixel_branch: Optional[DenseLayer] = None
    sp_branch: Optional[DenseLayer] = None
    pool_mode: str = "max"

    def __post_init__(self):
        self.kind = TopologyKind(self.kind)
        if self.pool_mode not in ("max", "avg"):
            raise ParameterError(f"unknown pooling mode {self.pool_mode!r}")
        if (self.pixel_branch is not None) != self.kind.uses_pixel_branch:
            raise ParameterError(f"{self.kind.name} head: pixel branch presence is wrong")
        if (self.sp_branch is not None) != self.kind.uses_sp_branch:
            raise ParameterError(f"{self.kind.name} head: superpixel branch presence is wrong")

    @classmethod
    def init(cls, kind, in_dim: int, num_classes: int, pool_mode: str = "max",
             seed: int = 0) -> "SegHead":
        # both branches are always drawn so paired runs share the pixel branch
        rng = np.random.default_rng(seed)
        pixel = DenseLayer.init(in_dim, num_classes, rng)
        sp = DenseLayer.init(in_dim, num_classes, rng)
        kind = TopologyKind(kind)
        return cls(kind, pixel if kind.uses_pixel_branch else None,
                   sp if kind.uses_sp_branch else None, pool_mode)

    @property
    def num_classes(self) -> int:
        layer = self.pixel_branch or self.sp_branch
        return layer.out_dim

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("pixel_branch", "sp_branch"):
            layer = getattr(self, name)
            if layer is not None:
                out[f"{name}.weights"] = layer.weights
                out[f"{name}.bias"] = layer.bias
        return out

    def with_params(self, params: dict[str, np.ndarray]) -> "SegHead":
        layers = {}
        for name in ("pixel_branch", "sp_branch"):
            if getattr(self, name) is not None:
                layers[name] = DenseLayer(params[f"{name}.weights"], params[f"{name}.bias"])
        return replace(self, **layers)


def _features(features) -> np.ndarray:
    x = features.data if isinstance(features, FeatureImage) else features
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"features must be a (C, P) array, got shape {x.shape}")
    return x


def _check_seg(x: np.ndarray, seg: LabelMap) -> None:
    if x.shape[1] != seg.pixel_count:
        raise DimensionError(f"features cover {x.shape[1]} pixels, segmentation {seg.pixel_count}")


def _forward(head: SegHead, x: np.ndarray, seg: LabelMap):
    _check_seg(x, seg)
    K, labels, mode = seg.num_labels, seg.labels, head.pool_mode
    tape = {}
    scores = 0.0
    if head.kind is TopologyKind.PIXEL:
        scores = head.pixel_branch.forward(x)
    elif head.kind is TopologyKind.V1:
        z = head.pixel_branch.forward(x)
        pz, tape["aux_scores"] = pool_arrays(z, labels, K, mode)
        scores = unpool_arrays(pz, labels)
    else:
        px, tape["aux_features"] = pool_arrays(x, labels, K, mode)
        tape["pooled_features"] = px
        scores = unpool_arrays(head.sp_branch.forward(px), labels)
        if head.kind is TopologyKind.V3:
            scores = scores + head.pixel_branch.forward(x)
    return scores, tape


def head_forward(head: SegHead, features, seg: LabelMap) -> np.ndarray:
    """Per-pixel class scores, shape ``(num_classes, P)``."""
    return _forward(head, _features(features), seg)[0]


def head_backward(head: SegHead, features, seg: LabelMap, grad_out):
    """Chain rule through the head. Returns ``(grad_features, grad_params)``."""
    x = _features(features)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (head.num_classes, seg.pixel_count):
        raise DimensionError(
            f"upstream gradient {grad_out.shape} != ({head.num_classes}, {seg.pixel_count})")
    _, tape = _forward(head, x, seg)
    K, labels, mode = seg.num_labels, seg.labels, head.pool_mode
    grad_x = np.zeros_like(x)
    grads = {}
    if head.kind is TopologyKind.V1:
        g_pooled = unpool_backward_arrays(grad_out, labels, K)
        g_z = pool_backward_arrays(g_pooled, labels, mode, tape["aux_scores"])
        gx, grads["pixel_branch.weights"], grads["pixel_branch.bias"] = head.pixel_branch.backward(x, g_z)
        grad_x += gx
    if head.kind in (TopologyKind.PIXEL, TopologyKind.V3):
        gx, grads["pixel_branch.weights"], grads["pixel_branch.bias"] = head.pixel_branch.backward(x, grad_out)
        grad_x += gx
    if head.kind.uses_sp_branch:
        g_q = unpool_backward_arrays(grad_out, labels, K)
        g_px, grads["sp_branch.weights"], grads["sp_branch.bias"] = head.sp_branch.backward(
            tape["pooled_features"], g_q)
        grad_x += pool_backward_arrays(g_px, labels, mode, tape["aux_features"])
    return grad_x, grads


def predict(head: SegHead, features, seg: LabelMap) -> np.ndarray:
    return head_forward(head, features, seg).argmax(axis=0)


def softmax_xent(scores, targets):
    """Mean per-pixel cross-entropy and its gradient wrt the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets).reshape(-1)
    n_cls, P = scores.shape
    if targets.size != P:
        raise DimensionError(f"{targets.size} targets for {P} pixels")
    if targets.size and (targets.min() < 0 or targets.max() >= n_cls):
        raise ParameterError(f"targets must lie in [0, {n_cls - 1}]")
    shifted = scores - scores.max(axis=0, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=0))
    log_prob = shifted - log_norm
    cols = np.arange(P)
    loss = -log_prob[targets, cols].mean()
    grad = np.exp(log_prob)
    grad[targets, cols] -= 1.0
    return float(loss), grad / P


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    head: SegHead
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    final_accuracy: float = float("nan")


def dataset_loss(head: SegHead, dataset):
    """Mean loss over the dataset and the summed parameter gradients."""
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in head.params().items()}
    for features, seg, targets in dataset:
        scores = head_forward(head, features, seg)
        loss, g_scores = softmax_xent(scores, targets)
        _, g = head_backward(head, features, seg, g_scores)
        total += loss
        for k in grads:
            grads[k] += g[k]
    n = len(dataset)
    return total / n, {k: v / n for k, v in grads.items()}


def dataset_accuracy(head: SegHead, dataset) -> float:
    hits = sum(int((predict(head, f, s) == np.asarray(t).reshape(-1)).sum()) for f, s, t in dataset)
    return hits / sum(s.pixel_count for _, s, _ in dataset)


def train_toy(head: SegHead, dataset, steps: int, learning_rate: float) -> TrainResult:
    """Full-batch gradient descent; records loss and accuracy before each step."""
    result = TrainResult(head)
    for step in range(int(steps)):
        loss, grads = dataset_loss(head, dataset)
        if not np.isfinite(loss):
            raise DivergenceError(step, loss)
        result.losses.append(loss)
        result.accuracies.append(dataset_accuracy(head, dataset))
        params = head.params()
        try:
            head = head.with_params({k: params[k] - learning_rate * grads[k] for k in params})
        except ParameterError as exc:
            raise DivergenceError(step, float("nan")) from exc
    result.head = head
    result.final_accuracy = dataset_accuracy(head, dataset)
    return result


def make_toy_dataset(n_images: int = 4, dims: Sequence[int] = (16, 16), channels: int = 3,
                     noise: float = 1.5, blocks: int = 16, seed: int = 0):
    """Two-class images with noisy per-pixel features and truth-aligned superpixels.

    Each image is split by a random straight boundary; every pixel's feature is
    its class mean plus Gaussian noise. Superpixels are the blocks of a
    ``block_segment`` further cut along the class boundary.
    """
    rng = np.random.default_rng(seed)
    shape = GridShape(tuple(dims))
    means = rng.normal(size=(2, channels))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    coords = np.indices(shape.dims).reshape(shape.ndim, -1).T.astype(np.float64)
    centre = (np.array(shape.dims) - 1) / 2
    data = []
    for _ in range(n_images):
        normal = rng.normal(size=shape.ndim)
        offset = rng.uniform(-0.25, 0.25) * min(shape.dims)
        truth = ((coords - centre) @ normal / np.linalg.norm(normal) > offset).astype(np.int64)
        x = means[truth].T + noise * rng.normal(size=(channels, shape.pixel_count))
        blocks_map = block_segment(shape, blocks)
        seg = relabel_contiguous(blocks_map.labels.astype(np.int64) * 2 + truth, shape)
        seg = enforce_connectivity(seg, 1)
        data.append((FeatureImage(shape, x), seg, truth))
    return data


# ----------------------------------------------------------- gradient check

def max_pool_margin(values: np.ndarray, labels: np.ndarray) -> float:
    """Smallest gap between the two largest values of any (channel, superpixel) group."""
    margin = np.inf
    for row in np.asarray(values):
        order = np.lexsort((-row, labels))
        lab, val = labels[order], row[order]
        same = lab[1:] == lab[:-1]
        first = np.r_[True, ~same]
        # gap between each group's leader and runner-up
        leader = first[:-1] & same
        if leader.any():
            margin = min(margin, float((val[:-1][leader] - val[1:][leader]).min()))
    return margin


def _margin_ok(head: SegHead, x: np.ndarray, seg: LabelMap, h: float) -> bool:
    if head.pool_mode != "max":
        return True
    # a step of h moves a feature by h and a class score by at most h*(|x| + |W|)
    if head.kind is TopologyKind.V1:
        w = head.pixel_branch.weights
        need = 4 * h * (1.0 + float(np.abs(x).max()) + float(np.abs(w).sum(axis=1).max()))
        return max_pool_margin(head.pixel_branch.forward(x), seg.labels) >= need
    return max_pool_margin(x, seg.labels) >= 4 * h


def random_instance(rng: np.random.Generator, kind, pool_mode: str = "max", max_pixels: int = 64,
                    max_channels: int = 4, max_labels: int = 8, num_classes: int = 2,
                    h: float = 1e-3, dims: Optional[Sequence[int]] = None,
                    channels: Optional[int] = None, labels: Optional[int] = None):
    """A random (head, features, seg, targets) away from max-pooling ties."""
    while True:
        if dims is None:
            ndim = int(rng.integers(2, 4))
            shape_dims = []
            budget = max_pixels
            for a in range(ndim):
                n = int(rng.integers(1, max(2, int(round(budget ** (1 / (ndim - a))))) + 1))
                shape_dims.append(n)
                budget = max(1, budget // n)
            shape = GridShape(tuple(shape_dims))
        else:
            shape = GridShape(tuple(dims))
        P = shape.pixel_count
        C = channels or int(rng.integers(1, max_channels + 1))
        K = labels or int(rng.integers(1, min(max_labels, P) + 1))
        raw = np.concatenate([np.arange(K), rng.integers(0, K, P - K)])
        rng.shuffle(raw)
        seg = LabelMap(shape, raw, K)
        x = rng.normal(size=(C, P))
        head = SegHead.init(kind, C, num_classes, pool_mode, seed=int(rng.integers(2 ** 31)))
        if _margin_ok(head, x, seg, h):
            targets = rng.integers(0, num_classes, P)
            return head, x, seg, targets


def _central_difference(f, arr: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        keep = arr[idx]
        arr[idx] = keep + h
        up = f()
        arr[idx] = keep - h
        down = f()
        arr[idx] = keep
        grad[idx] = (up - down) / (2 * h)
    return grad


def gradcheck(head: SegHead, features, seg: LabelMap, targets, h: float = 1e-3) -> float:
    """Max absolute deviation between analytic and central-difference gradients.

    The scalar objective is the mean cross-entropy of the head's scores; every
    feature and every parameter is perturbed.
    """
    x = _features(features).copy()
    params = {k: v.copy() for k, v in head.params().items()}

    def loss():
        return softmax_xent(head_forward(head.with_params(params), x, seg), targets)[0]

    _, g_scores = softmax_xent(head_forward(head, x, seg), targets)
    grad_x, grads = head_backward(head, x, seg, g_scores)
    worst = float(np.abs(_central_difference(loss, x, h) - grad_x).max())
    for name, arr in params.items():
        worst = max(worst, float(np.abs(_central_difference(loss, arr, h) - grads[name]).max()))
    return worst
