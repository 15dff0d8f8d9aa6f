"""Superpixel and supervoxel generators.

``slic_segment`` is k-means in joint (space, feature) coordinates with grid
seeding, local search windows and a compactness weight; ``block_segment``
tiles the grid with near-cubic boxes. Both return contiguous label maps whose
regions are face-connected.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from skimage.measure import label as connected_components

from .errors import ParameterError
from .tensor import FeatureImage, GridShape, LabelMap, as_shape, relabel_contiguous


@dataclass(frozen=True)
class SlicParams:
    k_target: int
    compactness: float = 10.0
    iterations: int = 10
    min_region_factor: float = 0.25

    def __post_init__(self):
        if int(self.k_target) < 1:
            raise ParameterError(f"k_target must be >= 1, got {self.k_target}")
        if not self.compactness >= 0 or not math.isfinite(self.compactness):
            raise ParameterError(f"compactness must be a finite value >= 0, got {self.compactness}")
        if int(self.iterations) < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 < self.min_region_factor <= 1:
            raise ParameterError(
                f"min_region_factor must be in (0, 1], got {self.min_region_factor}")


@dataclass
class ClusterCenter:
    spatial: np.ndarray
    feature: np.ndarray


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _axis_edges(length: int, parts: int) -> np.ndarray:
    """Boundaries of ``parts`` near-equal intervals; the last ones take the remainder."""
    base, extra = divmod(length, parts)
    sizes = np.full(parts, base)
    if extra:
        sizes[parts - extra:] += 1
    return np.concatenate(([0], np.cumsum(sizes)))


def _box_labels(dims: Sequence[int], splits: Sequence[int]) -> np.ndarray:
    """Row-major box index of every pixel for a per-axis split."""
    idx = np.zeros(tuple(dims), dtype=np.int64)
    for axis, (n, parts) in enumerate(zip(dims, splits)):
        coord = np.searchsorted(_axis_edges(n, parts), np.arange(n), side="right") - 1
        view = [1] * len(dims)
        view[axis] = n
        idx = idx * parts + coord.reshape(view)
    return idx


def block_splits(shape: GridShape, k_target: int) -> tuple[int, ...]:
    P, d = shape.pixel_count, shape.ndim
    edge = (P / k_target) ** (1.0 / d)
    return tuple(min(n, max(1, _round_half_up(n / edge))) for n in shape.dims)


def block_segment(shape, k_target: int) -> LabelMap:
    """Partition the grid into axis-aligned boxes as close to cubic as possible."""
    shape = as_shape(shape)
    k_target = int(k_target)
    if not 1 <= k_target <= shape.pixel_count:
        raise ParameterError(f"k_target must be in [1, {shape.pixel_count}], got {k_target}")
    splits = block_splits(shape, k_target)
    return relabel_contiguous(_box_labels(shape.dims, splits), shape)


# ------------------------------------------------------------ connectivity

def _adjacency(comp: np.ndarray) -> dict[int, set[int]]:
    pairs = []
    for axis in range(comp.ndim):
        lo = np.take(comp, np.arange(comp.shape[axis] - 1), axis=axis).ravel()
        hi = np.take(comp, np.arange(1, comp.shape[axis]), axis=axis).ravel()
        diff = lo != hi
        pairs.append(np.stack([lo[diff], hi[diff]], axis=1))
    pairs = np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    adj: dict[int, set[int]] = {}
    for a, b in pairs.tolist():
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def _merge_regions(grid: np.ndarray, min_region: int, max_regions: Optional[int] = None) -> np.ndarray:
    """Split labels into face-connected components and absorb the small ones.

    Components below ``min_region`` pixels are merged, smallest first, into
    their largest face-adjacent neighbour. If ``max_regions`` is given, the
    smallest remaining regions keep merging until at most that many remain.
    """
    comp = connected_components(grid, background=-1, connectivity=1) - 1
    n = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=n).tolist()
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    adj = _adjacency(comp)

    def absorb(r):
        nbrs = {find(b) for b in adj.get(r, ())} - {r}
        if not nbrs:
            return False
        best = max(nbrs, key=lambda b: (sizes[b], -b))
        parent[r] = best
        sizes[best] += sizes[r]
        adj.setdefault(best, set()).update(adj.pop(r, ()))
        return True

    alive = n
    for r in sorted(range(n), key=lambda c: (sizes[c], c)):
        if sizes[r] >= min_region or find(r) != r:
            continue
        alive -= absorb(r)

    if max_regions is not None and alive > max_regions:
        heap = [(sizes[r], r) for r in range(n) if find(r) == r]
        heapq.heapify(heap)
        while alive > max_regions and heap:
            size, r = heapq.heappop(heap)
            if find(r) != r or size != sizes[r]:
                continue
            if absorb(r):
                alive -= 1
                root = find(r)
                heapq.heappush(heap, (sizes[root], root))

    roots = np.array([find(c) for c in range(n)], dtype=np.int64)
    return roots[comp]


def enforce_connectivity(labels: LabelMap, min_region: int) -> LabelMap:
    """Make every region face-connected, merging components under ``min_region`` pixels."""
    merged = _merge_regions(labels.grid(), int(min_region))
    return relabel_contiguous(merged.ravel(), labels.shape)


# -------------------------------------------------------------------- SLIC

def seed_grid(dims: Sequence[int], k_target: int) -> tuple[int, ...]:
    """Per-axis seed counts with product <= k_target and near-cubic cells.

    Greedily splits the axis with the longest current cell extent (ties go to
    the last axis) until one more split would exceed ``k_target``.
    """
    counts = [1] * len(dims)
    while True:
        extents = [dims[a] / counts[a] for a in range(len(dims))]
        axis = max(range(len(dims)), key=lambda a: (extents[a], a))
        if counts[axis] >= dims[axis]:
            break
        trial = counts.copy()
        trial[axis] += 1
        if math.prod(trial) > k_target:
            break
        counts = trial
    return tuple(counts)


def _gradient_map(vol: np.ndarray) -> np.ndarray:
    """Sum over channels and axes of squared central differences (edge-clamped)."""
    grad = np.zeros(vol.shape[1:])
    for axis in range(1, vol.ndim):
        padded = np.pad(vol, [(0, 0)] * axis + [(1, 1)] + [(0, 0)] * (vol.ndim - axis - 1), mode="edge")
        n = vol.shape[axis]
        fwd = np.take(padded, np.arange(2, n + 2), axis=axis)
        bwd = np.take(padded, np.arange(0, n), axis=axis)
        grad += ((fwd - bwd) ** 2).sum(axis=0)
    return grad


def seed_centers(img: FeatureImage, k_target: int) -> list[ClusterCenter]:
    """Grid seeds, each moved to the lowest-gradient pixel of its 3^d neighbourhood."""
    dims = img.shape.dims
    vol = img.volume().astype(np.float64)
    grad = _gradient_map(vol)
    counts = seed_grid(dims, k_target)
    axes = [(np.arange(n) + 0.5) * dims[a] / n - 0.5 for a, n in enumerate(counts)]
    offsets = list(itertools.product((-1, 0, 1), repeat=len(dims)))
    centers = []
    for pos in itertools.product(*axes):
        spatial = np.array(pos)
        base = tuple(min(max(_round_half_up(p), 0), n - 1) for p, n in zip(pos, dims))
        best, best_g = base, grad[base]
        for off in offsets:
            cand = tuple(b + o for b, o in zip(base, off))
            if all(0 <= c < n for c, n in zip(cand, dims)) and grad[cand] < best_g:
                best, best_g = cand, grad[cand]
        if best != base:
            spatial = np.array(best, dtype=np.float64)
        centers.append(ClusterCenter(spatial, vol[(slice(None),) + best].copy()))
    return centers


def slic_segment(img: FeatureImage, params: SlicParams) -> LabelMap:
    shape = img.shape
    P, d = shape.pixel_count, shape.ndim
    k = int(params.k_target)
    if k > P:
        raise ParameterError(f"k_target={k} exceeds the pixel count {P}")
    dims = shape.dims
    step = (P / k) ** (1.0 / d)
    centers = seed_centers(img, k)
    pos = np.array([c.spatial for c in centers])
    feat = np.array([c.feature for c in centers])
    n_centers = len(centers)

    counts = seed_grid(dims, k)
    radius = max(step, max(n / c for n, c in zip(dims, counts)) / 2 + 1)
    weight = (params.compactness / step) ** 2
    vol = img.volume().astype(np.float64)
    flat = vol.reshape(vol.shape[0], -1)
    coords = np.indices(dims).reshape(d, -1).astype(np.float64)

    assign = np.full(dims, -1, dtype=np.int64)
    for _ in range(int(params.iterations)):
        best = np.full(dims, np.inf)
        assign.fill(-1)
        for j in range(n_centers):
            lo = [max(0, math.ceil(pos[j, a] - radius)) for a in range(d)]
            hi = [min(dims[a], math.floor(pos[j, a] + radius) + 1) for a in range(d)]
            window = tuple(slice(l, h) for l, h in zip(lo, hi))
            dist = ((vol[(slice(None),) + window] - feat[j].reshape((-1,) + (1,) * d)) ** 2).sum(axis=0)
            for a in range(d):
                ax = (np.arange(lo[a], hi[a]) - pos[j, a]) ** 2
                dist = dist + weight * ax.reshape([-1 if b == a else 1 for b in range(d)])
            closer = dist < best[window]
            best[window][closer] = dist[closer]
            assign[window][closer] = j
        flat_assign = assign.ravel()
        orphans = np.flatnonzero(flat_assign < 0)
        if orphans.size:
            dist = ((flat[:, orphans, None] - feat.T[:, None, :]) ** 2).sum(axis=0)
            dist += weight * ((coords[:, orphans, None] - pos.T[:, None, :]) ** 2).sum(axis=0)
            flat_assign[orphans] = dist.argmin(axis=1)
        members = np.bincount(flat_assign, minlength=n_centers)
        used = members > 0
        for a in range(d):
            pos[used, a] = np.bincount(flat_assign, coords[a], n_centers)[used] / members[used]
        for c in range(flat.shape[0]):
            feat[used, c] = np.bincount(flat_assign, flat[c], n_centers)[used] / members[used]

    min_region = max(1, _round_half_up(params.min_region_factor * P / k))
    merged = _merge_regions(assign, min_region, max_regions=2 * k)
    return relabel_contiguous(merged.ravel(), shape)
