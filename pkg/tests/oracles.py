"""Independent brute-force references used by several test modules."""

import math

import numpy as np


def bin_edges(start, length, pooled, i):
    """Bin ``i`` of ``pooled`` over cells start..start+length-1: [floor(i*h/p), ceil((i+1)*h/p))."""
    return start + math.floor(i * length / pooled), start + math.ceil((i + 1) * length / pooled)


def roi_pool_oracle(fmap, rect, ph, pw):
    """Nested-loop bin max over an (M, H, W) map; rect = (row0, col0, row1, col1) inclusive.

    Returns (values, flat argmax) with first-in-scan-order tie breaking.
    """
    r0, c0, r1, c1 = rect
    m, _, fw = fmap.shape
    out = np.empty((m, ph, pw), dtype=fmap.dtype)
    arg = np.empty((m, ph, pw), dtype=np.int64)
    for ch in range(m):
        for i in range(ph):
            ys, ye = bin_edges(r0, r1 - r0 + 1, ph, i)
            for j in range(pw):
                xs, xe = bin_edges(c0, c1 - c0 + 1, pw, j)
                best, where = None, None
                for y in range(ys, ye):
                    for x in range(xs, xe):
                        v = fmap[ch, y, x]
                        if best is None or v > best:
                            best, where = v, y * fw + x
                out[ch, i, j] = best
                arg[ch, i, j] = where
    return out, arg


def all_rects(h, w):
    return [(r0, c0, r1, c1) for r0 in range(h) for r1 in range(r0, h)
            for c0 in range(w) for c1 in range(c0, w)]


def exhaustive_roi_mismatches(max_side=8, pooled_sizes=(1, 2, 3), channels=2, seed=0):
    """Count disagreements between roi_pool_batch and the oracle over every map, RoI and pooled size."""
    from contextcnn.boxes import Box
    from contextcnn.roi import roi_pool_batch
    from contextcnn.tensor import Tensor

    rng = np.random.default_rng(seed)
    mismatches = checked = 0
    for h in range(1, max_side + 1):
        for w in range(1, max_side + 1):
            # small integer values force plenty of ties
            fmap = rng.integers(0, 4, size=(channels, h, w)).astype(np.float32)
            rects = all_rects(h, w)
            boxes = [Box(c0, r0, c1 + 1, r1 + 1) for r0, c0, r1, c1 in rects]
            for ph in pooled_sizes:
                for pw in pooled_sizes:
                    got = roi_pool_batch(Tensor(fmap[None]), [boxes], ph, pw, 1.0).data
                    for rect, g in zip(rects, got):
                        want, _ = roi_pool_oracle(fmap, rect, ph, pw)
                        checked += 1
                        mismatches += not np.array_equal(g, want)
    return mismatches, checked
