"""Training losses over one scene, as graph nodes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import cxcywh_to_xyxy
from .matching import LossWeights
from .tensor import Tensor

TERMS = ("l_loc_h", "l_loc_o", "l_o", "l_a", "total")


def giou_rows(pred_cxcywh, gt_xyxy):
    """Row-wise GIoU between predicted cxcywh boxes (Tensor [M, 4]) and fixed
    xyxy targets ([M, 4] array).  Returns a Tensor [M]."""
    cx, cy, w, h = (pred_cxcywh[:, i] for i in range(4))
    px1, px2 = cx - w * 0.5, cx + w * 0.5
    py1, py2 = cy - h * 0.5, cy + h * 0.5
    gx1, gy1, gx2, gy2 = (T.constant(gt_xyxy[:, i]) for i in range(4))
    iw = T.relu(T.minimum(px2, gx2) - T.maximum(px1, gx1))
    ih = T.relu(T.minimum(py2, gy2) - T.maximum(py1, gy1))
    inter = iw * ih
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = w * h + area_g - inter
    hull = (T.maximum(px2, gx2) - T.minimum(px1, gx1)) * (T.maximum(py2, gy2) - T.minimum(py1, gy1))
    return inter / union - (hull - union) / hull


@dataclass
class LossBreakdown:
    l_reg_h: Tensor
    l_giou_h: Tensor
    l_reg_o: Tensor
    l_giou_o: Tensor
    l_loc_h: Tensor
    l_loc_o: Tensor
    l_o: Tensor
    l_a: Tensor
    total: Tensor
    weights: LossWeights

    def values(self):
        return {name: getattr(self, name).item() for name in TERMS}

    def decomposition_error(self):
        v = self.values()
        w = self.weights
        return abs(v["total"] - (v["l_loc_h"] + v["l_loc_o"] + w.obj * v["l_o"] + w.act * v["l_a"]))


def _box_terms(pred_boxes, rows, gt_boxes):
    m = len(rows)
    if m == 0:
        zero = T.constant(0.0)
        return zero, zero
    pred = pred_boxes[np.asarray(rows)]
    target = np.asarray(gt_boxes, dtype=np.float64)
    l1 = T.abs_(pred - T.constant(target)).sum() * (1.0 / m)
    g = (1.0 - giou_rows(pred, cxcywh_to_xyxy(target))).sum() * (1.0 / m)
    return l1, g


def compute_losses(outputs, gts, assignment, weights=None):
    """Matched-pair box losses plus slot-wide classification losses.

    Box terms are means over matched pairs (L1 summed over the 4 cxcywh
    coordinates, GIoU loss 1 - giou).  The object-class cross-entropy and
    the per-action binary cross-entropy average over all slots; unmatched
    slots target the background class and all-zero actions.
    """
    weights = weights or LossWeights()
    n = len(outputs)
    rows = assignment.query_indices
    matched = [gts[g] for g in assignment.gt_indices]

    l_reg_h, l_giou_h = _box_terms(outputs.human_boxes, rows, [t.human_box for t in matched])
    l_reg_o, l_giou_o = _box_terms(outputs.object_boxes, rows, [t.object_box for t in matched])
    l_loc_h = l_reg_h * weights.reg + l_giou_h * weights.giou
    l_loc_o = l_reg_o * weights.reg + l_giou_o * weights.giou

    background = outputs.object_logits.shape[1] - 1
    targets = np.full(n, background)
    action_targets = np.zeros(outputs.action_logits.shape)
    for q, t in zip(rows, matched):
        targets[q] = t.object_class
        action_targets[q] = t.actions
    log_probs = T.log_softmax_lastdim(outputs.object_logits)
    l_o = -(log_probs[np.arange(n), targets].sum()) * (1.0 / n)

    x = outputs.action_logits
    l_a = (T.softplus(x) - x * T.constant(action_targets)).mean()

    total = l_loc_h + l_loc_o + l_o * weights.obj + l_a * weights.act
    return LossBreakdown(l_reg_h, l_giou_h, l_reg_o, l_giou_o, l_loc_h, l_loc_o, l_o, l_a, total, weights)
