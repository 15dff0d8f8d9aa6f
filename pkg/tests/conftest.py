import numpy as np
import pytest
from hypothesis import settings, strategies as st

from spxpool.tensor import FeatureImage, GridShape, LabelMap

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def brute_pool(x, seg, mode):
    """Independent per-segment scan with Python lists."""
    x = np.asarray(x, dtype=np.float64)
    K = max(seg) + 1
    members = {k: [i for i in range(len(seg)) if seg[i] == k] for k in range(K)}
    pooled = np.zeros((x.shape[0], K))
    argmax = np.zeros((x.shape[0], K), dtype=int)
    for c in range(x.shape[0]):
        for k, idx in members.items():
            vals = [x[c, i] for i in idx]
            if mode == "max":
                best = max(vals)
                pooled[c, k] = best
                argmax[c, k] = idx[vals.index(best)]
            else:
                pooled[c, k] = sum(vals) / len(vals)
    counts = np.array([len(members[k]) for k in range(K)])
    return pooled, argmax, counts


@st.composite
def image_and_segmentation(draw, max_side=9, max_channels=4, max_labels=12, ndims=(2, 3)):
    ndim = draw(st.sampled_from(ndims))
    dims = tuple(draw(st.integers(1, max_side if ndim == 2 else 4)) for _ in range(ndim))
    shape = GridShape(dims)
    P = shape.pixel_count
    C = draw(st.integers(1, max_channels))
    K = draw(st.integers(1, min(max_labels, P)))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    raw = np.concatenate([np.arange(K), rng.integers(0, K, P - K)])
    rng.shuffle(raw)
    # coarse value grid so that max-mode ties actually occur
    if draw(st.booleans()):
        data = rng.integers(-3, 4, (C, P)).astype(np.float32)
    else:
        data = rng.normal(size=(C, P)).astype(np.float32)
    return FeatureImage(shape, data), LabelMap(shape, raw, K)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
