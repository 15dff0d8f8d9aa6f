"""Superpixel pooling: per-superpixel max/avg reduction and its gradient.

``pooled[c, k] = reduce{ img[c, i] : seg[i] == k }``. The forward pass caches
the maximizing pixel of every (channel, superpixel) pair in max mode, or the
pixel count of every superpixel in avg mode, and the backward pass routes the
upstream gradient through that cache.

The ``*_arrays`` functions work on raw ``(C, P)`` arrays of any float dtype and
are what the network head builds on; the unsuffixed functions take and return
the typed containers from :mod:`spxpool.tensor`.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ConsistencyError, DimensionError, ParameterError
from .tensor import FeatureImage, LabelMap, PoolCache, PooledFeatures

MODES = ("max", "avg")
DEFAULT_CELL_EDGE = 32


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ParameterError(f"pooling mode must be one of {MODES}, got {mode!r}")


def _check_pair(img: FeatureImage, seg: LabelMap) -> None:
    if img.shape != seg.shape:
        raise DimensionError(f"image grid {img.shape} does not match segmentation grid {seg.shape}")


def _as_float(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x)


def pool_arrays(x: np.ndarray, seg: np.ndarray, K: int, mode: str):
    """Serial reference reduction of a ``(C, P)`` array.

    Returns ``(pooled, aux)`` where ``aux`` is the ``(C, K)`` argmax in max
    mode and the length-``K`` counts in avg mode.
    """
    _check_mode(mode)
    x = _as_float(x)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != seg.size:
        raise DimensionError(f"features {x.shape} do not match {seg.size} labels")
    if mode == "max":
        return _kernels.serial_max(x, seg, int(K))
    return _kernels.serial_avg(x, seg, int(K))


def pool_backward_arrays(grad_out: np.ndarray, seg: np.ndarray, mode: str, aux: np.ndarray) -> np.ndarray:
    _check_mode(mode)
    grad_out = np.asarray(grad_out)
    seg = np.asarray(seg)
    C, K = grad_out.shape
    if mode == "max":
        argmax = np.asarray(aux)
        if argmax.shape != (C, K):
            raise DimensionError(f"argmax cache {argmax.shape} does not match gradient {grad_out.shape}")
        if argmax.min() < 0 or argmax.max() >= seg.size:
            raise ConsistencyError("argmax cache points outside the image")
        if not np.array_equal(seg[argmax], np.broadcast_to(np.arange(K), (C, K))):
            raise ConsistencyError("argmax cache points at pixels outside their superpixel")
        grad_in = np.zeros((C, seg.size), dtype=grad_out.dtype)
        np.put_along_axis(grad_in, argmax, grad_out, axis=1)
        return grad_in
    counts = np.asarray(aux)
    if counts.shape != (K,):
        raise DimensionError(f"counts cache {counts.shape} does not match {K} superpixels")
    if not np.array_equal(np.bincount(seg, minlength=K), counts):
        raise ConsistencyError("cached counts disagree with the segmentation")
    return (grad_out / counts)[:, seg]


def unpool_arrays(pooled: np.ndarray, seg: np.ndarray) -> np.ndarray:
    return np.asarray(pooled)[:, np.asarray(seg)]


def unpool_backward_arrays(grad_pixels: np.ndarray, seg: np.ndarray, K: int) -> np.ndarray:
    """Transpose of :func:`unpool_arrays`: sum pixel gradients per superpixel."""
    grad_pixels = np.asarray(grad_pixels)
    return np.stack([np.bincount(seg, weights=g, minlength=K) for g in grad_pixels])


def _wrap(mode: str, pooled: np.ndarray, aux: np.ndarray):
    cache = PoolCache("max", argmax=aux) if mode == "max" else PoolCache("avg", counts=aux)
    return PooledFeatures(pooled), cache


def pool_forward(img: FeatureImage, seg: LabelMap, mode: str = "max"):
    """Serial superpixel pooling. Returns ``(PooledFeatures, PoolCache)``."""
    _check_pair(img, seg)
    pooled, aux = pool_arrays(img.data, seg.labels, seg.num_labels, mode)
    return _wrap(mode, pooled, aux)


def pool_forward_parallel(img: FeatureImage, seg: LabelMap, mode: str = "max",
                          cell_edge: int = DEFAULT_CELL_EDGE):
    """Data-parallel superpixel pooling over cubic cells with atomic updates.

    Produces the same pooled values and cache as :func:`pool_forward`; in avg
    mode the values may differ in the last float32 ulp because the partial
    sums are combined in a different order.
    """
    _check_pair(img, seg)
    _check_mode(mode)
    if int(cell_edge) < 1:
        raise ParameterError(f"cell_edge must be >= 1, got {cell_edge}")
    dims3 = np.array((1,) * (3 - img.shape.ndim) + img.shape.dims, dtype=np.int64)
    x = np.ascontiguousarray(img.data)
    labels = np.ascontiguousarray(seg.labels)
    kernel = _kernels.parallel_max if mode == "max" else _kernels.parallel_avg
    pooled, aux = kernel(x, labels, seg.num_labels, dims3, int(cell_edge))
    return _wrap(mode, pooled, aux)


def pool_backward(grad_out, cache: PoolCache, seg: LabelMap, P: int | None = None) -> np.ndarray:
    """Gradient of the pooling layer wrt its input image, shape ``(C, P)``."""
    grad_out = np.asarray(grad_out.data if isinstance(grad_out, PooledFeatures) else grad_out)
    if grad_out.ndim != 2 or grad_out.shape[1] != seg.num_labels:
        raise DimensionError(
            f"upstream gradient {grad_out.shape} does not match {seg.num_labels} superpixels")
    if P is not None and P != seg.pixel_count:
        raise DimensionError(f"P={P} but segmentation has {seg.pixel_count} pixels")
    aux = cache.argmax if cache.mode == "max" else cache.counts
    return pool_backward_arrays(grad_out, seg.labels, cache.mode, aux)


def unpool_broadcast(pooled: PooledFeatures, seg: LabelMap) -> FeatureImage:
    """Give every pixel the pooled value of its superpixel."""
    if pooled.num_labels != seg.num_labels:
        raise DimensionError(
            f"pooled array has {pooled.num_labels} superpixels, segmentation has {seg.num_labels}")
    return FeatureImage(seg.shape, unpool_arrays(pooled.data, seg.labels))
