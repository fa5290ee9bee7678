"""Confidence-ranked object proposals.

Three sources feed the model:

* :func:`objectness_proposals` scores a fixed multi-scale sliding grid by
  the density of gradient energy a box encloses minus ``lambda`` times the
  density on a thin ring just outside it (edges the boundary straddles),
  then applies NMS.
* :func:`oracle_proposals` uses the ground-truth object boxes, optionally
  jittered, ranked by the image mass they enclose.
* :func:`adversarial_random_boxes` samples boxes of similar size that
  overlap none of the reference boxes.
"""

import math

import numpy as np

from contextcnn.boxes import Box, iou, pad_boxes, sort_by_score

GRID_SCALES = (1 / 2, 1 / 3, 1 / 4)
STRADDLE_PENALTY = 2.0
SOBEL_RADIUS = 1
RING_WIDTH = 1
SIZE_SPREAD = 0.2


class FeasibilityError(RuntimeError):
    def __init__(self, achieved, requested):
        super().__init__(f"placed only {achieved} of {requested} non-overlapping boxes")
        self.achieved = achieved
        self.requested = requested


def sobel_magnitude(image):
    """Gradient magnitude of a 2-D image with edge-replicated borders."""
    p = np.pad(np.asarray(image, dtype=np.float64), 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return np.hypot(gx, gy)


def integral_image(values):
    out = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    out[1:, 1:] = values.cumsum(0).cumsum(1)
    return out


def _rect_sums(ii, x0, y0, x1, y1):
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def sliding_grid(height, width):
    """Candidate boxes (x0, y0, x1, y1) in deterministic grid order."""
    cands = []
    for scale in GRID_SCALES:
        bh = max(1, round(height * scale))
        bw = max(1, round(width * scale))
        sy = max(1, bh // 8)
        sx = max(1, bw // 8)
        for y in range(0, height - bh + 1, sy):
            for x in range(0, width - bw + 1, sx):
                cands.append((x, y, x + bw, y + bh))
    return np.array(cands, dtype=np.int64).reshape(-1, 4)


def objectness_scores(image, cands, penalty=STRADDLE_PENALTY):
    """Raw contrast scores: enclosed gradient density minus penalty x ring density.

    The Sobel response of an edge spreads one pixel past it, so a box's
    enclosed region is the box grown by that pixel, and straddling energy is
    read from the one-pixel ring just outside that region (clipped to the
    image).
    """
    height, width = image.shape
    ii = integral_image(sobel_magnitude(image))
    x0, y0, x1, y1 = cands.T

    def grown(by):
        return (np.maximum(x0 - by, 0), np.maximum(y0 - by, 0),
                np.minimum(x1 + by, width), np.minimum(y1 + by, height))

    def area(r):
        return (r[2] - r[0]) * (r[3] - r[1])

    inner, outer = grown(SOBEL_RADIUS), grown(SOBEL_RADIUS + RING_WIDTH)
    inner_sum = _rect_sums(ii, *inner)
    ring_sum = _rect_sums(ii, *outer) - inner_sum
    ring_area = area(outer) - area(inner)
    return inner_sum / area(inner) - penalty * ring_sum / np.maximum(ring_area, 1)


def objectness_proposals(image, n, nms_iou=0.5):
    """Top-``n`` boxes of the sliding grid after NMS, scores normalized to [0, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=0)
    cands = sliding_grid(*image.shape)
    raw = np.maximum(objectness_scores(image, cands), 0.0)
    top = raw.max() if raw.size else 0.0
    scores = raw / top if top > 0 else np.zeros_like(raw)
    order = np.argsort(-scores, kind="stable")
    ranked = []
    for idx in order:
        b = Box(*(float(v) for v in cands[idx]), float(scores[idx]))
        if all(iou(b, k) <= nms_iou for k in ranked):
            ranked.append(b)
            if len(ranked) == n:
                break
    return ranked


def _mass(image, box):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.sum(axis=0)
    x0, y0, x1, y1 = (int(round(v)) for v in box.coords())
    return float(img[y0:y1, x0:x1].sum())


def oracle_proposals(sample, n, jitter=0.0, rng_seed=0):
    """Ground-truth boxes (jittered by up to ``jitter`` x size), ranked by enclosed mass.

    Scores are the enclosed intensity mass normalized by the largest; ties
    keep ground-truth order. Padded/truncated to ``n`` by repeating the
    lowest-ranked box.
    """
    if not sample.gt_boxes:
        raise ValueError("oracle proposals need at least one ground-truth box")
    rng = np.random.default_rng(rng_seed)
    _, h, w = sample.image.shape
    boxes = []
    for b in sample.gt_boxes:
        if jitter > 0:
            dx = rng.uniform(-jitter, jitter, 2) * b.width
            dy = rng.uniform(-jitter, jitter, 2) * b.height
            x0 = min(max(round(b.x0 + dx[0]), 0), w - 1)
            y0 = min(max(round(b.y0 + dy[0]), 0), h - 1)
            x1 = max(min(round(b.x1 + dx[1]), w), x0 + 1)
            y1 = max(min(round(b.y1 + dy[1]), h), y0 + 1)
            b = Box(float(x0), float(y0), float(x1), float(y1))
        boxes.append(b)
    mass = np.array([_mass(sample.image, b) for b in boxes])
    top = mass.max()
    scores = mass / top if top > 0 else np.ones_like(mass)
    ranked = sort_by_score([b.with_score(s) for b, s in zip(boxes, scores)])
    return pad_boxes(ranked, n)


def adversarial_random_boxes(reference, image_dims, n, max_overlap=0.10, rng_seed=0,
                             max_attempts=None):
    """``n`` boxes sized within +/-20% of the reference mean, each with IoU below
    ``max_overlap`` against every reference box; random scores, sorted."""
    if not reference:
        raise ValueError("adversarial boxes need reference boxes")
    height, width = image_dims
    rng = np.random.default_rng(rng_seed)
    mean_w = float(np.mean([b.width for b in reference]))
    mean_h = float(np.mean([b.height for b in reference]))

    def size_bounds(mean, limit):
        lo = max(1, math.ceil(mean * (1 - SIZE_SPREAD) - 1e-9))
        hi = min(limit, math.floor(mean * (1 + SIZE_SPREAD) + 1e-9))
        return lo, max(lo, hi)

    w_lo, w_hi = size_bounds(mean_w, width)
    h_lo, h_hi = size_bounds(mean_h, height)
    attempts = max_attempts if max_attempts is not None else 1000 * n
    out = []
    for _ in range(attempts):
        if len(out) == n:
            break
        bw = int(rng.integers(w_lo, w_hi + 1))
        bh = int(rng.integers(h_lo, h_hi + 1))
        x = int(rng.integers(0, width - bw + 1))
        y = int(rng.integers(0, height - bh + 1))
        cand = Box(float(x), float(y), float(x + bw), float(y + bh))
        if all(iou(cand, r) < max_overlap for r in reference):
            out.append(cand)
    if len(out) < n:
        raise FeasibilityError(len(out), n)
    scores = rng.random(n)
    return sort_by_score([b.with_score(s) for b, s in zip(out, scores)])
