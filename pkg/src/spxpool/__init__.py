"""Superpixel / supervoxel pooling for dense 2D and 3D feature images."""

from .errors import (ConsistencyError, DimensionError, DivergenceError, FormatError,
                     ParameterError, ResourceError, SpxError, TensorTypeError)
from .tensor import (FeatureImage, GridShape, LabelMap, PoolCache, PooledFeatures,
                     relabel_contiguous)
from .io import read_tensor, write_tensor
from .pooling import pool_backward, pool_forward, pool_forward_parallel, unpool_broadcast

__version__ = "0.1.0"
