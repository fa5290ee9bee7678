"""Quantized RoI max pooling of feature-map windows to a fixed grid."""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from contextcnn import kernels
from contextcnn.boxes import Box
from contextcnn.tensor import DimensionError, from_op


class InvalidBoxError(ValueError):
    pass


class CellRect(NamedTuple):
    """Inclusive feature-map cell bounds."""

    row0: int
    col0: int
    row1: int
    col1: int

    @property
    def height(self):
        return self.row1 - self.row0 + 1

    @property
    def width(self):
        return self.col1 - self.col0 + 1


@dataclass(frozen=True)
class RoiSpec:
    box: Box
    pooled_h: int = 7
    pooled_w: int = 7
    spatial_scale: float = 1.0

    def __post_init__(self):
        if self.pooled_h < 1 or self.pooled_w < 1:
            raise ValueError(f"pooled size must be >= 1, got {self.pooled_h}x{self.pooled_w}")


def _edges(lo, hi, scale, size):
    start = min(max(math.floor(lo * scale), 0), size - 1)
    stop = min(max(math.ceil(hi * scale) - 1, 0), size - 1)
    return start, max(stop, start)


def map_box_to_feature(box, spatial_scale, fm_h, fm_w):
    """Scale a pixel box onto the feature grid.

    The min edge is floored, the (exclusive) max edge ceiled, and both are
    clamped into the map. Boxes thinner than one cell become one cell.
    """
    if not (box.x1 > box.x0 and box.y1 > box.y0):
        raise InvalidBoxError(f"box {box.coords()} has non-positive area")
    col0, col1 = _edges(box.x0, box.x1, spatial_scale, fm_w)
    row0, row1 = _edges(box.y0, box.y1, spatial_scale, fm_h)
    return CellRect(row0, col0, row1, col1)


def _pool(features, rois, pooled_h, pooled_w):
    """features (N, M, H, W); rois int64 (R, 5) rows of (batch, row0, col0, row1, col1)."""
    n, _, fh, fw = features.shape
    out, argmax = kernels.roi_pool_forward(features.data, rois, pooled_h, pooled_w)
    batch_index = np.ascontiguousarray(rois[:, 0])

    def backward(g):
        return (kernels.roi_pool_backward(np.ascontiguousarray(g), argmax, batch_index, n, fh, fw),)

    return from_op(out, (features,), backward)


def roi_pool(features, spec):
    """Pool one RoI from a (M, H, W) feature map into (M, pooled_h, pooled_w)."""
    if features.ndim != 3:
        raise DimensionError(f"roi_pool expects (M, H, W) features, got {features.shape}")
    m, fh, fw = features.shape
    cell = map_box_to_feature(spec.box, spec.spatial_scale, fh, fw)
    rois = np.array([[0, *cell]], dtype=np.int64)
    out = _pool(features.reshape(1, m, fh, fw), rois, spec.pooled_h, spec.pooled_w)
    return out.reshape(m, spec.pooled_h, spec.pooled_w)


def roi_pool_batch(features, boxes_per_image, pooled_h, pooled_w, spatial_scale):
    """Pool every box of every image; returns (sum of box counts, M, ph, pw).

    ``boxes_per_image[b]`` lists the boxes for image ``b`` of the batch;
    output rows follow image order, then box order.
    """
    if features.ndim != 4:
        raise DimensionError(f"roi_pool_batch expects (N, M, H, W) features, got {features.shape}")
    n, _, fh, fw = features.shape
    if len(boxes_per_image) != n:
        raise DimensionError(f"{len(boxes_per_image)} box lists for a batch of {n}")
    rows = [(b, *map_box_to_feature(box, spatial_scale, fh, fw))
            for b, boxes in enumerate(boxes_per_image) for box in boxes]
    rois = np.array(rows, dtype=np.int64).reshape(-1, 5)
    return _pool(features, rois, pooled_h, pooled_w)
