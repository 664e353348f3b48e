"""Role mAP, box detection metrics, pair-wise NMS and the masking probe."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import expit, softmax

from .boxes import cxcywh_to_xyxy, iou
from .data import SceneSample, cell_mask
from .errors import ConfigurationError
from .model import hodn_forward


@dataclass(frozen=True)
class ScoredTriplet:
    scene_id: int
    human_box: tuple  # x1, y1, x2, y2
    object_box: tuple
    object_class: int
    action: int
    score: float


@dataclass(frozen=True)
class DetectionSummary:
    recall: float
    precision: float
    ap: float


@dataclass
class EvalReport:
    per_category: Dict[int, float] = field(default_factory=dict)
    mean_ap: float = math.nan  # nan when there is no ground truth at all
    human: Optional[DetectionSummary] = None
    object: Optional[DetectionSummary] = None

    def rows(self):
        rows = [(f"role_ap[{a}]", v) for a, v in sorted(self.per_category.items())]
        rows.append(("role_map", self.mean_ap))
        for kind, summary in (("human", self.human), ("object", self.object)):
            if summary is not None:
                rows += [(f"{kind}_recall", summary.recall), (f"{kind}_precision", summary.precision),
                         (f"{kind}_ap", summary.ap)]
        return rows

    def format_table(self):
        return "metric\tvalue\n" + "".join(f"{k}\t{v:.6f}\n" for k, v in self.rows())


def _xyxy(box):
    return tuple(float(v) for v in cxcywh_to_xyxy(box))


def _ground_truth(gts):
    """Accept a list of scenes or a ``{scene_id: triplets}`` mapping."""
    if isinstance(gts, dict):
        return gts
    return {s.scene_id: s.triplets for s in gts}


# ----------------------------------------------------------------------
# scoring and NMS
# ----------------------------------------------------------------------
def outputs_to_triplets(predictions, scene_id):
    """Expand every slot into one triplet per action.

    The object class is the most probable foreground class; the score is
    that class probability times the sigmoid of the action logit.
    """
    out = []
    for p in predictions:
        probs = softmax(np.asarray(p.object_class_logits, dtype=np.float64))[:-1]
        cls = int(np.argmax(probs))
        act = expit(np.asarray(p.interaction_logits, dtype=np.float64))
        hb, ob = _xyxy(p.human_box), _xyxy(p.object_box)
        for a in range(act.size):
            out.append(ScoredTriplet(scene_id, hb, ob, cls, a, float(probs[cls] * act[a])))
    return out


def _by_score(triplets):
    # stable: equal scores keep their input order
    return sorted(triplets, key=lambda t: -t.score)


def _overlap_or_zero(a, b):
    try:
        return iou(a, b)
    except ValueError:
        return 0.0


def suppresses(kept, other, threshold):
    return (kept.scene_id == other.scene_id and kept.object_class == other.object_class
            and kept.action == other.action
            and _overlap_or_zero(kept.human_box, other.human_box) > threshold
            and _overlap_or_zero(kept.object_box, other.object_box) > threshold)


def pairwise_nms(triplets, threshold):
    """Greedy descending-score sweep; a triplet is dropped when an already
    kept one shares its scene, class and action and overlaps it above
    ``threshold`` on both the human and the object box."""
    if not 0 < threshold <= 1:
        raise ConfigurationError(f"NMS threshold must lie in (0, 1], got {threshold}")
    kept = []
    for t in _by_score(triplets):
        if not any(suppresses(k, t, threshold) for k in kept):
            kept.append(t)
    return kept


# ----------------------------------------------------------------------
# average precision
# ----------------------------------------------------------------------
def average_precision(hits, num_gt):
    """Area under the exact precision/recall staircase for a ranked list of
    hit flags (no interpolation)."""
    if num_gt == 0:
        return math.nan
    hits = np.asarray(hits, dtype=bool)
    if hits.size == 0:
        return 0.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / num_gt)


def _greedy_hits(ranked, gt_by_scene, overlap, compatible):
    """Match ranked predictions to unclaimed ground truth.  Each prediction
    takes the compatible unclaimed item with the best overlap (lowest index
    on ties) when that overlap exceeds the threshold test in ``overlap``."""
    claimed = {sid: [False] * len(items) for sid, items in gt_by_scene.items()}
    hits = []
    for pred in ranked:
        best, best_score = None, -math.inf
        for j, gt in enumerate(gt_by_scene.get(pred.scene_id, ())):
            if claimed[pred.scene_id][j] or not compatible(pred, gt):
                continue
            score = overlap(pred, gt)
            if score is not None and score > best_score:
                best, best_score = j, score
        if best is not None:
            claimed[pred.scene_id][best] = True
        hits.append(best is not None)
    return hits


def role_map(triplets, gts, iou_threshold=0.5):
    """Per-action AP over ``triplets``; a hit needs the object class to
    match and both the human and the object IoU to exceed the threshold."""
    if not 0 < iou_threshold < 1:
        raise ConfigurationError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    gts = _ground_truth(gts)
    instances = {}  # action -> scene -> [(human xyxy, object xyxy, class)]
    for sid, items in gts.items():
        for t in items:
            for a in t.action_indices:
                instances.setdefault(a, {}).setdefault(sid, []).append(
                    (_xyxy(t.human_box), _xyxy(t.object_box), t.object_class))
    if not instances:
        return EvalReport()

    def overlap(pred, gt):
        m = min(_overlap_or_zero(pred.human_box, gt[0]), _overlap_or_zero(pred.object_box, gt[1]))
        return m if m > iou_threshold else None

    per_category = {}
    for a in sorted(instances):
        ranked = _by_score([t for t in triplets if t.action == a])
        hits = _greedy_hits(ranked, instances[a], overlap, lambda p, g: p.object_class == g[2])
        per_category[a] = average_precision(hits, sum(len(v) for v in instances[a].values()))
    return EvalReport(per_category, float(np.mean(list(per_category.values()))))


@dataclass(frozen=True)
class _Box:
    scene_id: int
    box: tuple
    label: int
    score: float


def _detections(triplets, kind):
    """Unique (scene, box, label) detections, scored by their best triplet."""
    best = {}
    for t in triplets:
        if kind == "human":
            key = (t.scene_id, t.human_box, 0)
        else:
            key = (t.scene_id, t.object_box, t.object_class)
        if key not in best or t.score > best[key].score:
            best[key] = _Box(key[0], key[1], key[2], t.score)
    return list(best.values())


def _box_metrics(dets, gt_boxes, iou_threshold):
    """Recall and precision over the full detection set plus mean per-label AP."""
    labels = sorted({label for items in gt_boxes.values() for _, label in items})
    if not labels:
        return DetectionSummary(math.nan, math.nan, math.nan)

    def overlap(pred, gt):
        v = _overlap_or_zero(pred.box, gt[0])
        return v if v > iou_threshold else None

    tp, aps = 0, []
    for label in labels:
        ranked = _by_score([d for d in dets if d.label == label])
        per_scene = {sid: [g for g in items if g[1] == label] for sid, items in gt_boxes.items()}
        hits = _greedy_hits(ranked, per_scene, overlap, lambda p, g: True)
        tp += sum(hits)
        aps.append(average_precision(hits, sum(len(v) for v in per_scene.values())))
    num_gt = sum(len(v) for v in gt_boxes.values())
    precision = tp / len(dets) if dets else 0.0
    return DetectionSummary(tp / num_gt, precision, float(np.mean(aps)))


def detection_metrics(triplets, gts, iou_threshold=0.5):
    """Box detection quality ignoring interactions: humans as one class,
    objects per class.  Returns ``(human, object)`` summaries."""
    gts = _ground_truth(gts)
    human_gt, object_gt = {}, {}
    for sid, items in gts.items():
        hs, os_ = [], []
        for t in items:
            h = (_xyxy(t.human_box), 0)
            o = (_xyxy(t.object_box), t.object_class)
            if h not in hs:
                hs.append(h)
            if o not in os_:
                os_.append(o)
        human_gt[sid], object_gt[sid] = hs, os_
    return (_box_metrics(_detections(triplets, "human"), human_gt, iou_threshold),
            _box_metrics(_detections(triplets, "object"), object_gt, iou_threshold))


# ----------------------------------------------------------------------
# model evaluation and the masking probe
# ----------------------------------------------------------------------
def predict_scene(scene, params, config):
    """NMS-filtered scored triplets for one scene."""
    result = hodn_forward(scene, params, config)
    triplets = outputs_to_triplets(result.predictions(), scene.scene_id)
    return pairwise_nms(triplets, config.nms_threshold)


def predict_dataset(dataset, params, config):
    out = []
    for scene in dataset:
        out += predict_scene(scene, params, config)
    return out


def evaluate(dataset, params, config, triplets=None):
    triplets = predict_dataset(dataset, params, config) if triplets is None else triplets
    report = role_map(triplets, dataset, config.iou_threshold)
    report.human, report.object = detection_metrics(triplets, dataset, config.iou_threshold)
    return report


def format_triplet_dump(triplets):
    lines = []
    for t in triplets:
        fields = [str(t.scene_id)] + [format(v, ".17g") for v in t.human_box + t.object_box]
        fields += [str(t.object_class), str(t.action), format(t.score, ".17g")]
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class ProbeResult:
    target: str
    prob: float
    mean_ap: float
    masked_cells: int


def mask_dataset(dataset, target, prob, seed):
    """Copy of ``dataset`` where each ground-truth box of kind ``target``
    has, with probability ``prob``, every channel of its cells zeroed.
    Returns ``(masked_dataset, masked_cell_count)``."""
    if target not in ("human", "object"):
        raise ConfigurationError(f"probe target must be 'human' or 'object', got {target!r}")
    if not 0 <= prob <= 1:
        raise ConfigurationError(f"masking probability must lie in [0, 1], got {prob}")
    rng = np.random.default_rng(seed)
    masked, cells = [], 0
    for scene in dataset:
        grid = scene.grid.copy()
        _, height, width = grid.shape
        for t in scene.triplets:
            if rng.random() < prob:
                m = cell_mask(t.human_box if target == "human" else t.object_box, height, width)
                grid[:, m] = 0.0
                cells += int(m.sum())
        masked.append(SceneSample(scene.scene_id, grid, list(scene.triplets)))
    return masked, cells


def masking_probe(dataset, params, config, target, prob, seed=0):
    """Role mAP with fixed parameters after masking ``target`` boxes."""
    masked, cells = mask_dataset(dataset, target, prob, seed)
    triplets = predict_dataset(masked, params, config)
    return ProbeResult(target, prob, role_map(triplets, dataset, config.iou_threshold).mean_ap, cells)
