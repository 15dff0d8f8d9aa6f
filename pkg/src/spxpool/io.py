"""SPXT tensor files and binary PGM/PPM ingestion.

SPXT layout (little-endian)::

    b"SPXT" | u32 version=1 | u32 dtype (1=f32, 2=i32) | u32 ndim | u32 dims[ndim] | data

Feature images store the channel axis as the first dim.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DimensionError, FormatError, TensorTypeError
from .tensor import FeatureImage, GridShape, LabelMap, PooledFeatures, relabel_contiguous

MAGIC = b"SPXT"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<i4")}
CODE_FOR_KIND = {"f": 1, "i": 2}

Tensor = Union[FeatureImage, LabelMap, PooledFeatures]


def write_array(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code = 1
    elif arr.dtype.kind in "iub":
        code = 2
    else:
        raise FormatError(f"cannot store dtype {arr.dtype} in SPXT")
    data = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code])
    header = MAGIC + struct.pack("<III", VERSION, code, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_array(path) -> np.ndarray:
    """Read an SPXT file into a plain array with its stored dims."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an SPXT file")
    version, code, ndim = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported SPXT version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= 8:
        raise FormatError(f"{path}: bad ndim {ndim}")
    offset = 16 + 4 * ndim
    if len(raw) < offset:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 16)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = len(raw) - offset
    if payload < expected:
        raise FormatError(f"{path}: truncated data ({payload} of {expected} bytes)")
    if payload > expected:
        raise DimensionError(
            f"{path}: dims {dims} account for {expected} bytes but file holds {payload}")
    arr = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(value: Tensor, path) -> None:
    if isinstance(value, FeatureImage):
        write_array(value.volume(), path)
    elif isinstance(value, LabelMap):
        write_array(value.grid(), path)
    elif isinstance(value, PooledFeatures):
        write_array(value.data, path)
    else:
        raise TypeError(f"cannot write {type(value).__name__} as SPXT")


def _to_label_map(arr: np.ndarray) -> LabelMap:
    shape = GridShape(arr.shape)
    flat = arr.reshape(-1)
    K = int(flat.max()) + 1 if flat.size else 0
    if flat.min() >= 0 and np.bincount(flat, minlength=K).min() > 0:
        return LabelMap(shape, flat, K)
    return relabel_contiguous(flat, shape)


def read_tensor(path, expect: Optional[type] = None) -> Tensor:
    """Read an SPXT file as the tensor kind its dtype and rank imply.

    f32 with 3 or 4 dims is a FeatureImage, f32 with 2 dims is PooledFeatures,
    i32 with 2 or 3 dims is a LabelMap. Pass ``expect`` to insist on one kind.
    """
    arr = read_array(path)
    if arr.dtype.kind == "f":
        if arr.ndim in (3, 4):
            kind = FeatureImage
        elif arr.ndim == 2:
            kind = PooledFeatures
        else:
            raise DimensionError(f"{path}: float tensor of rank {arr.ndim} is not a known kind")
    else:
        if arr.ndim not in (2, 3):
            raise DimensionError(f"{path}: integer tensor of rank {arr.ndim} is not a label map")
        kind = LabelMap
    if expect is not None and kind is not expect:
        raise TensorTypeError(f"{path}: holds a {kind.__name__}, expected {expect.__name__}")
    if kind is FeatureImage:
        return FeatureImage(GridShape(arr.shape[1:]), arr)
    if kind is PooledFeatures:
        return PooledFeatures(arr)
    return _to_label_map(arr)


def _pnm_tokens(raw: bytes, count: int):
    """Yield ``count`` header tokens and the offset of the raster."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pnm(path) -> FeatureImage:
    """Binary PGM (P5, one channel) or PPM (P6, three channels), scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pnm_tokens(raw, 4)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM type {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PNM header") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    if len(raw) - offset < n * dtype.itemsize:
        raise FormatError(f"{path}: truncated raster")
    px = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).astype(np.float32)
    px = px.reshape(h, w, channels).transpose(2, 0, 1) / maxval
    return FeatureImage(GridShape((h, w)), px)


def load_image(path) -> FeatureImage:
    """Load a feature image from SPXT, PGM or PPM, sniffing the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:2] in (b"P5", b"P6"):
        return read_pnm(path)
    return read_tensor(path, expect=FeatureImage)
