"""Compiled segmented-reduction kernels.

The serial kernels are straight per-channel scans. The parallel kernels split
the grid into cubic cells and hand every (channel, cell) pair to a worker;
workers publish into one shared output with hardware atomics: compare-and-swap
for max, fetch-add for sums and counts.
"""

import os

import numba
import numpy as np
from llvmlite import ir
from numba import njit, prange, types
from numba.core import cgutils
from numba.extending import intrinsic

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB layer shipped here is too old and warns on every first launch
    numba.config.THREADING_LAYER = "omp"


def _element_pointer(context, builder, aryty, ary_val, idx_val):
    ary = context.make_array(aryty)(context, builder, ary_val)
    return cgutils.get_item_pointer(context, builder, aryty, ary, [idx_val], wraparound=False)


@intrinsic
def atomic_add(typingctx, arr, idx, val):
    """``arr[idx] += val`` as one atomic read-modify-write; returns the old value."""
    if not (isinstance(arr, types.Array) and arr.ndim == 1):
        return None
    sig = arr.dtype(arr, types.intp, arr.dtype)

    def codegen(context, builder, sig, args):
        ptr = _element_pointer(context, builder, sig.args[0], args[0], args[1])
        op = "fadd" if isinstance(sig.args[0].dtype, types.Float) else "add"
        return builder.atomic_rmw(op, ptr, args[2], "monotonic")

    return sig, codegen


@intrinsic
def atomic_min_int(typingctx, arr, idx, val):
    """``arr[idx] = min(arr[idx], val)`` atomically for signed integer arrays."""
    if not (isinstance(arr, types.Array) and arr.ndim == 1
            and isinstance(arr.dtype, types.Integer)):
        return None
    sig = arr.dtype(arr, types.intp, arr.dtype)

    def codegen(context, builder, sig, args):
        ptr = _element_pointer(context, builder, sig.args[0], args[0], args[1])
        return builder.atomic_rmw("min", ptr, args[2], "monotonic")

    return sig, codegen


@intrinsic
def atomic_max_float(typingctx, arr, idx, val):
    """Raise ``arr[idx]`` to ``val`` with a compare-and-swap loop on the raw bits."""
    if not (isinstance(arr, types.Array) and arr.ndim == 1
            and isinstance(arr.dtype, types.Float)):
        return None
    sig = arr.dtype(arr, types.intp, arr.dtype)

    def codegen(context, builder, sig, args):
        fty = context.get_value_type(sig.args[0].dtype)
        width = sig.args[0].dtype.bitwidth
        ity = ir.IntType(width)
        ptr = _element_pointer(context, builder, sig.args[0], args[0], args[1])
        iptr = builder.bitcast(ptr, ity.as_pointer())
        new_f = args[2]
        new_i = builder.bitcast(new_f, ity)

        entry = builder.basic_block
        loop = builder.append_basic_block("amax.loop")
        swap = builder.append_basic_block("amax.swap")
        done = builder.append_basic_block("amax.done")
        seen0 = builder.load_atomic(iptr, "monotonic", width // 8)
        builder.branch(loop)

        builder.position_at_end(loop)
        seen = builder.phi(ity)
        seen.add_incoming(seen0, entry)
        bigger = builder.fcmp_ordered(">", new_f, builder.bitcast(seen, fty))
        builder.cbranch(bigger, swap, done)

        builder.position_at_end(swap)
        res = builder.cmpxchg(iptr, seen, new_i, "monotonic", "monotonic")
        seen.add_incoming(builder.extract_value(res, 0), swap)
        builder.cbranch(builder.extract_value(res, 1), done, loop)

        builder.position_at_end(done)
        return builder.bitcast(seen, fty)

    return sig, codegen


# ---------------------------------------------------------------- serial

@njit(cache=True, nogil=True)
def serial_max(x, seg, K):
    C, P = x.shape
    out = np.empty((C, K), dtype=x.dtype)
    arg = np.full((C, K), -1, dtype=np.int64)
    for c in range(C):
        for i in range(P):
            k = seg[i]
            v = x[c, i]
            # strict '>' keeps the first (smallest) index on ties
            if arg[c, k] < 0 or v > out[c, k]:
                out[c, k] = v
                arg[c, k] = i
    return out, arg


@njit(cache=True, nogil=True)
def serial_avg(x, seg, K):
    C, P = x.shape
    counts = np.zeros(K, dtype=np.int64)
    sums = np.zeros((C, K), dtype=np.float64)
    for c in range(C):
        # fold runs of equal labels in registers before touching memory
        run_k = seg[0]
        run_s = 0.0
        run_n = 0
        for i in range(P):
            k = seg[i]
            if k != run_k:
                sums[c, run_k] += run_s
                counts[run_k] += run_n
                run_k = k
                run_s = 0.0
                run_n = 0
            run_s += x[c, i]
            run_n += 1
        sums[c, run_k] += run_s
        counts[run_k] += run_n
    # every channel counted each pixel once
    if C > 0:
        counts //= C
    out = np.empty((C, K), dtype=x.dtype)
    for c in range(C):
        for k in range(K):
            out[c, k] = sums[c, k] / counts[k]
    return out, counts


# -------------------------------------------------------------- parallel

@njit(cache=True, nogil=True, inline="always")
def _cell_bounds(cell, ncy, ncx, edge, D, H, W):
    cz = cell // (ncy * ncx)
    cy = (cell // ncx) % ncy
    cx = cell % ncx
    z0 = cz * edge
    y0 = cy * edge
    x0 = cx * edge
    return z0, min(z0 + edge, D), y0, min(y0 + edge, H), x0, min(x0 + edge, W)


@njit(cache=True, parallel=True)
def parallel_max(x, seg, K, dims3, edge):
    C, P = x.shape
    D, H, W = dims3[0], dims3[1], dims3[2]
    ncz = (D + edge - 1) // edge
    ncy = (H + edge - 1) // edge
    ncx = (W + edge - 1) // edge
    ncells = ncz * ncy * ncx
    out = np.full(C * K, -np.inf, dtype=x.dtype)

    for item in prange(C * ncells):
        c = item // ncells
        z0, z1, y0, y1, x0, x1 = _cell_bounds(item % ncells, ncy, ncx, edge, D, H, W)
        for z in range(z0, z1):
            for y in range(y0, y1):
                base = (z * H + y) * W
                for xx in range(x0, x1):
                    i = base + xx
                    slot = c * K + seg[i]
                    v = x[c, i]
                    # plain read first: most pixels lose and never need the CAS
                    if v > out[slot]:
                        atomic_max_float(out, slot, v)

    # second pass: smallest pixel index that attains each stored maximum
    arg = np.full(C * K, P, dtype=np.int64)
    for item in prange(C * ncells):
        c = item // ncells
        z0, z1, y0, y1, x0, x1 = _cell_bounds(item % ncells, ncy, ncx, edge, D, H, W)
        for z in range(z0, z1):
            for y in range(y0, y1):
                base = (z * H + y) * W
                for xx in range(x0, x1):
                    i = base + xx
                    slot = c * K + seg[i]
                    if x[c, i] == out[slot] and i < arg[slot]:
                        atomic_min_int(arg, slot, np.int64(i))
    return out.reshape(C, K), arg.reshape(C, K)


LOCAL_SLOTS = 16


@njit(cache=True, nogil=True, inline="always")
def _stash(tag, part_s, part_n, sums, counts, c, K, k, s, n):
    """Add a finished run to the worker-local table, evicting a colliding entry."""
    h = k % LOCAL_SLOTS
    if tag[h] != k:
        if tag[h] >= 0:
            atomic_add(sums, c * K + tag[h], part_s[h])
            if c == 0:
                atomic_add(counts, tag[h], part_n[h])
        tag[h] = k
        part_s[h] = 0.0
        part_n[h] = 0
    part_s[h] += s
    part_n[h] += n


@njit(cache=True, parallel=True)
def parallel_avg(x, seg, K, dims3, edge):
    C, P = x.shape
    D, H, W = dims3[0], dims3[1], dims3[2]
    ncz = (D + edge - 1) // edge
    ncy = (H + edge - 1) // edge
    ncx = (W + edge - 1) // edge
    ncells = ncz * ncy * ncx
    sums = np.zeros(C * K, dtype=np.float64)
    counts = np.zeros(K, dtype=np.int64)

    for item in prange(C * ncells):
        c = item // ncells
        z0, z1, y0, y1, x0, x1 = _cell_bounds(item % ncells, ncy, ncx, edge, D, H, W)
        # runs fold in registers, finished runs in a small direct-mapped
        # table; only evictions and the final drain hit the shared arrays
        tag = np.full(LOCAL_SLOTS, -1, dtype=np.int64)
        part_s = np.zeros(LOCAL_SLOTS, dtype=np.float64)
        part_n = np.zeros(LOCAL_SLOTS, dtype=np.int64)
        run_k = -1
        run_s = 0.0
        run_n = 0
        for z in range(z0, z1):
            for y in range(y0, y1):
                base = (z * H + y) * W
                for xx in range(x0, x1):
                    i = base + xx
                    k = seg[i]
                    if k != run_k:
                        if run_k >= 0:
                            _stash(tag, part_s, part_n, sums, counts, c, K, run_k, run_s, run_n)
                        run_k = k
                        run_s = 0.0
                        run_n = 0
                    run_s += x[c, i]
                    run_n += 1
        if run_k >= 0:
            _stash(tag, part_s, part_n, sums, counts, c, K, run_k, run_s, run_n)
        for h in range(LOCAL_SLOTS):
            if tag[h] >= 0:
                atomic_add(sums, c * K + tag[h], part_s[h])
                if c == 0:
                    atomic_add(counts, tag[h], part_n[h])

    out = np.empty(C * K, dtype=x.dtype)
    for j in prange(C * K):
        out[j] = sums[j] / counts[j % K]
    return out.reshape(C, K), counts
