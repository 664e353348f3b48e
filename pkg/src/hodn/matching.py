"""Set matching between ground-truth triplets and prediction slots."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit, softmax

from .boxes import cxcywh_to_xyxy, giou, pairwise_giou
from .errors import CapacityError, DimensionError


@dataclass(frozen=True)
class LossWeights:
    reg: float = 1.0
    giou: float = 2.5
    obj: float = 1.0
    act: float = 1.0

    @classmethod
    def from_config(cls, config):
        return cls(config.lambda_reg, config.lambda_giou, config.lambda_o, config.lambda_a)


@dataclass
class MatchAssignment:
    pairs: list = field(default_factory=list)  # (gt_index, query_index), in gt order
    total_cost: float = 0.0

    @property
    def gt_indices(self):
        return [g for g, _ in self.pairs]

    @property
    def query_indices(self):
        return [q for _, q in self.pairs]


def match_cost(pred, gt, weights):
    """Cost of assigning one ground-truth triplet to one prediction slot."""
    obj_prob = softmax(np.asarray(pred.object_class_logits, dtype=np.float64))
    act_prob = expit(np.asarray(pred.interaction_logits, dtype=np.float64))
    l1 = (np.abs(np.subtract(pred.human_box, gt.human_box)).sum()
          + np.abs(np.subtract(pred.object_box, gt.object_box)).sum())
    g = ((1.0 - giou(cxcywh_to_xyxy(pred.human_box), cxcywh_to_xyxy(gt.human_box)))
         + (1.0 - giou(cxcywh_to_xyxy(pred.object_box), cxcywh_to_xyxy(gt.object_box))))
    true_actions = gt.action_indices
    act = float(np.mean(1.0 - act_prob[true_actions])) if true_actions else 0.0
    return (weights.reg * l1 + weights.giou * g
            + weights.obj * (1.0 - obj_prob[gt.object_class]) + weights.act * act)


def cost_matrix(outputs, gts, weights):
    """[G, N] matrix of :func:`match_cost` over all pairs, from head outputs."""
    hb = outputs.human_boxes.data
    ob = outputs.object_boxes.data
    obj_prob = softmax(outputs.object_logits.data, axis=-1)
    act_prob = expit(outputs.action_logits.data)
    n = hb.shape[0]
    if not gts:
        return np.zeros((0, n))
    gh = np.array([t.human_box for t in gts])
    go = np.array([t.object_box for t in gts])
    l1 = (np.abs(gh[:, None, :] - hb[None]).sum(-1) + np.abs(go[:, None, :] - ob[None]).sum(-1))
    g = ((1.0 - pairwise_giou(cxcywh_to_xyxy(gh), cxcywh_to_xyxy(hb)))
         + (1.0 - pairwise_giou(cxcywh_to_xyxy(go), cxcywh_to_xyxy(ob))))
    cls = np.array([t.object_class for t in gts])
    c_obj = 1.0 - obj_prob[:, cls].T
    labels = np.array([t.actions for t in gts], dtype=np.float64)
    counts = np.maximum(labels.sum(axis=1, keepdims=True), 1.0)
    c_act = ((1.0 - act_prob)[None, :, :] * labels[:, None, :]).sum(-1) / counts
    return weights.reg * l1 + weights.giou * g + weights.obj * c_obj + weights.act * c_act


def _assignment_total(cost, cols):
    return float(sum(cost[r, c] for r, c in enumerate(cols)))


def hungarian_match(cost):
    """Minimum-cost injective assignment of every row (ground truth) to a
    column (query slot).  Among optimal assignments the lexicographically
    smallest column sequence is returned."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-D, got shape {cost.shape}")
    g, n = cost.shape
    if g > n:
        raise CapacityError(f"{g} ground-truth triplets exceed {n} query slots")
    if g == 0:
        return MatchAssignment([], 0.0)
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix has non-finite entries")

    rows, cols = linear_sum_assignment(cost)
    cols = list(cols[np.argsort(rows)])
    best = _assignment_total(cost, cols)
    tol = 8 * np.finfo(np.float64).eps * max(1.0, float(np.abs(cost).max())) * g

    # walk rows in order, moving each to the smallest column that keeps the
    # optimum for the remaining rows
    for r in range(g):
        used = set(cols[:r])
        for c in range(cols[r]):
            if c in used:
                continue
            free = [k for k in range(n) if k not in used and k != c]
            rest = cost[r + 1:][:, free]
            if rest.shape[0]:
                sub_rows, sub_cols = linear_sum_assignment(rest)
                tail = [free[k] for k in sub_cols[np.argsort(sub_rows)]]
            else:
                tail = []
            candidate = cols[:r] + [c] + tail
            if _assignment_total(cost, candidate) <= best + tol:
                cols = candidate
                break
    pairs = list(enumerate(int(c) for c in cols))
    return MatchAssignment(pairs, _assignment_total(cost, cols))
