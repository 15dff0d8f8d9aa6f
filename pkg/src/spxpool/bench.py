"""Runtime sweeps of the pooling kernels over image size and superpixel count."""

from __future__ import annotations

import csv
import math
import statistics
import sys
import time
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.stats import linregress

from .errors import ParameterError, ResourceError
from .pooling import DEFAULT_CELL_EDGE, pool_forward, pool_forward_parallel
from .superpixels import block_segment
from .tensor import FeatureImage, GridShape

COLUMNS = ("P", "K", "kernel", "mode", "median_s", "min_s")
KERNELS = ("serial", "parallel")


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple[int, ...]
    ks: tuple[int, ...]
    channels: int = 1
    repeats: int = 3
    mode: str = "max"
    kernel: str = "serial"
    seed: int = 0
    cell_edge: int = DEFAULT_CELL_EDGE

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        if not self.sizes or not self.ks:
            raise ParameterError("sweep needs at least one size and one K")
        if min(self.sizes + self.ks) < 1 or self.channels < 1:
            raise ParameterError("sweep values and channel count must be >= 1")
        if self.repeats < 3:
            raise ParameterError(f"repeats must be >= 3, got {self.repeats}")
        if self.mode not in ("max", "avg"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.kernel not in KERNELS + ("both",):
            raise ParameterError(f"unknown kernel {self.kernel!r}")

    @property
    def kernels(self) -> tuple[str, ...]:
        return KERNELS if self.kernel == "both" else (self.kernel,)


@dataclass(frozen=True)
class BenchRow:
    P: int
    K: int
    kernel: str
    mode: str
    median_s: float
    min_s: float


def grid_for(P: int) -> GridShape:
    """Most square 2D grid with exactly P pixels."""
    h = math.isqrt(P)
    while P % h:
        h -= 1
    return GridShape((h, P // h))


def _time(fn, repeats: int) -> list[float]:
    fn()  # warm-up, also triggers compilation
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def bench_run(cfg: BenchConfig) -> list[BenchRow]:
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for P in cfg.sizes:
        for K in cfg.ks:
            try:
                shape = grid_for(P)
                img = FeatureImage(shape, rng.random((cfg.channels, P), dtype=np.float32))
                seg = block_segment(shape, K)
            except MemoryError as exc:
                raise ResourceError(f"cannot allocate sweep point P={P}, K={K}") from exc
            for kernel in cfg.kernels:
                if kernel == "serial":
                    fn = lambda: pool_forward(img, seg, cfg.mode)
                else:
                    fn = lambda: pool_forward_parallel(img, seg, cfg.mode, cfg.cell_edge)
                times = _time(fn, cfg.repeats)
                rows.append(BenchRow(P, seg.num_labels, kernel, cfg.mode,
                                     statistics.median(times), min(times)))
            del img, seg
    return rows


def write_csv(rows: Iterable[BenchRow], out: TextIO | str | None = None) -> None:
    own = isinstance(out, str)
    fh = open(out, "w", newline="") if own else (out or sys.stdout)
    try:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in rows:
            writer.writerow([r.P, r.K, r.kernel, r.mode, f"{r.median_s:.6e}", f"{r.min_s:.6e}"])
    finally:
        if own:
            fh.close()


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> float:
    """Coefficient of determination of a least-squares line through (x, y)."""
    return float(linregress(np.asarray(x, float), np.asarray(y, float)).rvalue ** 2)


def spread_ratio(values: Sequence[float]) -> float:
    return float(max(values) / min(values))
