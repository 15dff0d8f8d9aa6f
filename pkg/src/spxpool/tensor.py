"""Dense data model: grids, feature images, label maps and pooled arrays.

Feature data is stored channel-major as a ``(C, P)`` float32 array, pixels in
row-major order (last spatial axis fastest). Label maps are int32 arrays of
length ``P`` holding 0-based contiguous superpixel ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ParameterError

FEATURE_DTYPE = np.float32
LABEL_DTYPE = np.int32


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not 2 <= len(dims) <= 3:
            raise DimensionError(f"grid must be 2D or 3D, got dims {dims}")
        if any(d < 1 for d in dims):
            raise DimensionError(f"grid dims must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def pixel_count(self) -> int:
        return int(np.prod(self.dims))

    def __str__(self) -> str:
        return "x".join(str(d) for d in self.dims)


def as_shape(shape: GridShape | Sequence[int]) -> GridShape:
    return shape if isinstance(shape, GridShape) else GridShape(tuple(shape))


@dataclass(frozen=True, eq=False)
class FeatureImage:
    """C channels over a 2D/3D grid. ``data`` has shape ``(C, P)``."""

    shape: GridShape
    data: np.ndarray

    def __post_init__(self):
        shape = as_shape(self.shape)
        data = np.array(self.data, dtype=FEATURE_DTYPE, order="C", copy=True)
        P = shape.pixel_count
        if data.ndim == 1:
            if data.size % P:
                raise DimensionError(
                    f"feature data length {data.size} is not a multiple of P={P}")
            data = data.reshape(-1, P)
        elif data.ndim == 1 + shape.ndim and data.shape[1:] == shape.dims:
            data = data.reshape(data.shape[0], P)
        elif data.ndim != 2 or data.shape[1] != P:
            raise DimensionError(
                f"feature data of shape {data.shape} does not fit grid {shape}")
        if data.shape[0] < 1:
            raise DimensionError("feature image needs at least one channel")
        if not np.isfinite(data).all():
            raise ParameterError("feature image contains non-finite values")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def pixel_count(self) -> int:
        return self.data.shape[1]

    def volume(self) -> np.ndarray:
        """View of the data as ``(C, *dims)``."""
        return self.data.reshape((self.channels,) + self.shape.dims)

    def __eq__(self, other):
        if not isinstance(other, FeatureImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel superpixel ids in ``[0, num_labels)``, every id used."""

    shape: GridShape
    labels: np.ndarray
    num_labels: Optional[int] = None

    def __post_init__(self):
        shape = as_shape(self.shape)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if labels.size != shape.pixel_count:
            raise DimensionError(
                f"label map has {labels.size} entries, grid {shape} needs {shape.pixel_count}")
        K = int(labels.max()) + 1 if self.num_labels is None else int(self.num_labels)
        if K < 1:
            raise ParameterError("label map needs at least one label")
        if labels.min() < 0 or labels.max() >= K:
            raise ParameterError(f"labels must lie in [0, {K - 1}]")
        if np.bincount(labels, minlength=K).min() == 0:
            raise ParameterError("label map has empty superpixels; use relabel_contiguous")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "labels", _frozen(labels.astype(LABEL_DTYPE)))
        object.__setattr__(self, "num_labels", K)

    @property
    def pixel_count(self) -> int:
        return self.labels.size

    def grid(self) -> np.ndarray:
        return self.labels.reshape(self.shape.dims)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_labels)

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (self.shape == other.shape and self.num_labels == other.num_labels
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class PooledFeatures:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=FEATURE_DTYPE, order="C", copy=True)
        if data.ndim != 2:
            raise DimensionError(f"pooled features must be C x K, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_labels(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PooledFeatures):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class PoolCache:
    """State saved by the forward pass for the backward pass.

    ``argmax`` is ``(C, K)`` flat pixel indices (max mode); ``counts`` is the
    length-``K`` pixel count per superpixel (avg mode).
    """

    mode: str
    argmax: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode == "max":
            if self.argmax is None:
                raise ParameterError("max-mode cache requires argmax")
            object.__setattr__(self, "argmax", _frozen(np.array(self.argmax, dtype=np.int64)))
        elif self.mode == "avg":
            if self.counts is None:
                raise ParameterError("avg-mode cache requires counts")
            counts = np.array(self.counts, dtype=np.int64).reshape(-1)
            if counts.size and counts.min() < 1:
                raise ParameterError("avg-mode counts must be >= 1")
            object.__setattr__(self, "counts", _frozen(counts))
        else:
            raise ParameterError(f"unknown pooling mode {self.mode!r}")

    def __eq__(self, other):
        if not isinstance(other, PoolCache):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b))
        return (self.mode == other.mode and same(self.argmax, other.argmax)
                and same(self.counts, other.counts))


def relabel_contiguous(raw_labels, shape: GridShape | Sequence[int]) -> LabelMap:
    """Renumber arbitrary non-negative ids to 0..K-1 by order of first appearance."""
    shape = as_shape(shape)
    raw = np.asarray(raw_labels).reshape(-1)
    if raw.size != shape.pixel_count:
        raise DimensionError(
            f"{raw.size} labels given for grid {shape} with {shape.pixel_count} pixels")
    if raw.size and raw.min() < 0:
        raise ParameterError("raw labels must be non-negative")
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return LabelMap(shape, rank[inverse.reshape(-1)], first.size)
