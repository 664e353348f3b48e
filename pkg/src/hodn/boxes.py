"""Box conversions and overlap measures on plain floats / numpy arrays."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateBoxError


def cxcywh_to_xyxy(box):
    box = np.asarray(box, dtype=np.float64)
    cx, cy, w, h = np.moveaxis(box, -1, 0)
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(box):
    box = np.asarray(box, dtype=np.float64)
    x1, y1, x2, y2 = np.moveaxis(box, -1, 0)
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def _check(box):
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise DegenerateBoxError(f"degenerate box {tuple(box)}: need x1<x2 and y1<y2")
    return x1, y1, x2, y2


def _overlap(a, b):
    ax1, ay1, ax2, ay2 = _check(a)
    bx1, by1, bx2, by2 = _check(b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter, union, hull


def iou(box_a, box_b):
    """Intersection over union of two xyxy boxes."""
    inter, union, _ = _overlap(box_a, box_b)
    return inter / union


def giou(box_a, box_b):
    """Generalised IoU of two xyxy boxes, in (-1, 1]."""
    inter, union, hull = _overlap(box_a, box_b)
    # the hull contains the union; clamp away rounding that would push giou above iou
    return inter / union - max(0.0, hull - union) / hull


def giou_loss(box_a, box_b):
    return 1.0 - giou(box_a, box_b)


def pairwise_iou(boxes_a, boxes_b):
    """[n, m] IoU matrix for xyxy arrays; no degeneracy check."""
    a = np.asarray(boxes_a, dtype=np.float64)[:, None, :]
    b = np.asarray(boxes_b, dtype=np.float64)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    return inter / (area_a + area_b - inter)


def pairwise_giou(boxes_a, boxes_b):
    a = np.asarray(boxes_a, dtype=np.float64)[:, None, :]
    b = np.asarray(boxes_b, dtype=np.float64)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    union = ((a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
             + (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1]) - inter)
    hull = ((np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0]))
            * (np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])))
    return inter / union - np.clip(hull - union, 0, None) / hull
