import math

import numpy as np
import pytest

from hodn.boxes import cxcywh_to_xyxy
from hodn.data import GroundTruthTriplet, SceneSample, generate_dataset
from hodn.evaluation import (ScoredTriplet, average_precision, detection_metrics, evaluate,
                             format_triplet_dump, mask_dataset, masking_probe, outputs_to_triplets,
                             pairwise_nms, role_map)
from hodn.model import HOIPrediction, init_params

from oracles import greedy_nms, oracle_box_ap, oracle_role_ap


def xyxy(box):
    return tuple(float(v) for v in cxcywh_to_xyxy(box))


def gt(h, o, cls, actions):
    return GroundTruthTriplet(h, o, cls, actions)


def exact(t, scene_id=0, action=0, score=0.9):
    return ScoredTriplet(scene_id, xyxy(t.human_box), xyxy(t.object_box), t.object_class, action, score)


G1 = gt((0.3, 0.3, 0.2, 0.2), (0.6, 0.3, 0.2, 0.2), 1, (True, False))


class TestNms:
    def test_duplicate(self):
        a, b = exact(G1, score=0.9), exact(G1, score=0.8)
        assert pairwise_nms([b, a], 0.7) == [a]

    def test_action_gate(self):
        a, b = exact(G1, action=0, score=0.9), exact(G1, action=1, score=0.8)
        assert pairwise_nms([a, b], 0.7) == [a, b]

    def test_scene_gate(self):
        a, b = exact(G1, scene_id=0), exact(G1, scene_id=1, score=0.5)
        assert len(pairwise_nms([a, b], 0.7)) == 2

    def test_one_box_overlap_is_not_enough(self):
        a = exact(G1, score=0.9)
        b = ScoredTriplet(0, a.human_box, (0.0, 0.0, 0.1, 0.1), a.object_class, 0, 0.8)
        assert len(pairwise_nms([a, b], 0.7)) == 2

    @staticmethod
    def chain(shifts, scores):
        out = []
        for s, sc in zip(shifts, scores):
            box = (0.1 + s, 0.1, 0.5 + s, 0.5)
            out.append(ScoredTriplet(0, box, box, 0, 0, sc))
        return out

    def test_chain_middle_suppressed_third_survives(self):
        # a overlaps b above threshold, b overlaps c, a does not overlap c:
        # greedy keeps a and c
        items = self.chain([0.0, 0.05, 0.1], [0.9, 0.8, 0.7])
        kept = pairwise_nms(items, 0.7)
        assert kept == [items[0], items[2]] == greedy_nms(items, 0.7)

    @pytest.mark.parametrize("seed", range(30))
    def test_random_chains_match_greedy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        shifts = np.cumsum(rng.uniform(0.0, 0.08, size=n))
        scores = rng.permutation(n) / n + 0.01
        items = self.chain(shifts, scores)
        for thr in (0.5, 0.7, 0.9):
            assert pairwise_nms(items, thr) == greedy_nms(items, thr)

    def test_ties_keep_input_order(self):
        items = self.chain([0.0, 0.01], [0.5, 0.5])
        assert pairwise_nms(items, 0.7) == [items[0]]


class TestAveragePrecision:
    def test_perfect(self):
        report = role_map([exact(G1)], {0: [G1]})
        assert report.per_category == {0: 1.0} and report.mean_ap == 1.0

    def test_no_predictions(self):
        g2 = gt((0.3, 0.7, 0.2, 0.2), (0.6, 0.7, 0.2, 0.2), 0, (True, True))
        report = role_map([], {0: [G1, g2]})
        assert report.per_category == {0: 0.0, 1: 0.0}

    def test_correct_one_ranked_second(self):
        wrong = ScoredTriplet(0, (0.0, 0.0, 0.05, 0.05), (0.9, 0.9, 1.0, 1.0), 1, 0, 0.95)
        report = role_map([wrong, exact(G1, score=0.5)], {0: [G1]})
        assert report.per_category[0] == 0.5

    def test_wrong_class_misses(self):
        t = exact(G1)
        t = ScoredTriplet(t.scene_id, t.human_box, t.object_box, 0, 0, 0.9)
        assert role_map([t], {0: [G1]}).mean_ap == 0.0

    def test_no_ground_truth_sentinel(self):
        report = role_map([exact(G1)], {0: []})
        assert report.per_category == {} and math.isnan(report.mean_ap)

    def test_staircase(self):
        assert average_precision([True, False, True], 2) == pytest.approx((1 + 2 / 3) / 2)
        assert average_precision([], 3) == 0.0

    def test_order_invariance(self, rng):
        preds, gts = random_case(rng)
        perm = rng.permutation(len(preds))
        assert role_map(preds, gts).per_category == role_map([preds[i] for i in perm], gts).per_category


def random_box(rng, near=None):
    if near is None:
        x, y = rng.uniform(0, 0.6, size=2)
        return (x, y, x + rng.uniform(0.1, 0.4), y + rng.uniform(0.1, 0.4))
    jitter = rng.uniform(-0.06, 0.06, size=4)
    b = np.array(near) + jitter
    return (b[0], b[1], max(b[2], b[0] + 0.01), max(b[3], b[1] + 0.01))


def random_case(rng):
    """<= 3 ground-truth triplets over two scenes and <= 6 predictions,
    most of them near a ground truth box pair."""
    gts = {0: [], 1: []}
    flat = []
    for _ in range(int(rng.integers(1, 4))):
        sid = int(rng.integers(2))
        h, o = random_box(rng), random_box(rng)
        cls = int(rng.integers(2))
        acts = tuple(bool(v) for v in rng.random(2) < 0.6)
        acts = acts if any(acts) else (True, False)
        t = GroundTruthTriplet(tuple(cxcywh_from(h)), tuple(cxcywh_from(o)), cls, acts)
        gts[sid].append(t)
        flat.append((sid, t))
    preds = []
    for _ in range(int(rng.integers(0, 7))):
        sid, t = flat[int(rng.integers(len(flat)))]
        if rng.random() < 0.8:
            h, o = random_box(rng, xyxy(t.human_box)), random_box(rng, xyxy(t.object_box))
        else:
            h, o = random_box(rng), random_box(rng)
        cls = t.object_class if rng.random() < 0.8 else int(rng.integers(2))
        preds.append(ScoredTriplet(sid, tuple(float(v) for v in h), tuple(float(v) for v in o), cls,
                                   int(rng.integers(2)), float(rng.uniform(0.05, 1.0))))
    return preds, gts


def cxcywh_from(b):
    return ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2, b[2] - b[0], b[3] - b[1])


@pytest.mark.parametrize("seed", range(100))
def test_role_map_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    preds, gts = random_case(rng)
    flat = [(sid, xyxy(t.human_box), xyxy(t.object_box), t.object_class, a)
            for sid, items in gts.items() for t in items for a in t.action_indices]
    want = oracle_role_ap(preds, flat, 0.5)
    got = role_map(preds, gts, 0.5).per_category
    assert set(got) == set(want)
    for a in want:
        assert got[a] == pytest.approx(want[a], abs=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_detection_metrics_match_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    preds, gts = random_case(rng)
    human, obj = detection_metrics(preds, gts, 0.5)

    def dets(kind):
        best = {}
        for t in preds:
            key = (t.scene_id, t.human_box, 0) if kind == "h" else (t.scene_id, t.object_box, t.object_class)
            best[key] = max(best.get(key, -1.0), t.score)
        return [k + (s,) for k, s in best.items()]

    hg = sorted({(sid, xyxy(t.human_box), 0) for sid, items in gts.items() for t in items})
    og = sorted({(sid, xyxy(t.object_box), t.object_class) for sid, items in gts.items() for t in items})
    for got, want in ((human, oracle_box_ap(dets("h"), hg, 0.5)), (obj, oracle_box_ap(dets("o"), og, 0.5))):
        assert got.recall == pytest.approx(want[0], abs=1e-12)
        assert got.precision == pytest.approx(want[1], abs=1e-12)
        assert got.ap == pytest.approx(want[2], abs=1e-12)


def test_detection_perfect():
    h, o = detection_metrics([exact(G1)], {0: [G1]})
    assert (h.recall, h.precision, h.ap) == (1.0, 1.0, 1.0)
    assert (o.recall, o.precision, o.ap) == (1.0, 1.0, 1.0)


def test_detection_order_invariance(rng):
    preds, gts = random_case(rng)
    a = detection_metrics(preds, gts)
    b = detection_metrics(preds[::-1], gts)
    assert a == b


def test_outputs_to_triplets_scores():
    p = HOIPrediction(np.array([0.5, 0.5, 0.2, 0.2]), np.array([0.5, 0.5, 0.4, 0.4]),
                      np.array([math.log(2), 0.0, 0.0]), np.array([0.0, math.log(3)]))
    out = outputs_to_triplets([p], scene_id=7)
    assert [t.action for t in out] == [0, 1]
    assert out[0].object_class == 0 and out[0].scene_id == 7
    assert out[0].score == pytest.approx(0.5 * 0.5, abs=1e-15)
    assert out[1].score == pytest.approx(0.5 * 0.75, abs=1e-15)
    assert out[0].human_box == pytest.approx((0.4, 0.4, 0.6, 0.6))


def test_dump_format():
    line = format_triplet_dump([exact(G1, scene_id=3, action=1, score=0.25)]).rstrip("\n").split("\t")
    assert len(line) == 12 and line[0] == "3" and line[-3:] == ["1", "1", "0.25"]


class TestMaskingProbe:
    def test_zero_probability_is_identity(self, tiny):
        data = generate_dataset(3, 0, tiny)
        params = init_params(tiny)
        base = evaluate(data, params, tiny).mean_ap
        r = masking_probe(data, params, tiny, "human", 0.0, seed=4)
        assert r.masked_cells == 0
        assert np.float64(r.mean_ap).tobytes() == np.float64(base).tobytes()

    @pytest.mark.parametrize("target", ["human", "object"])
    def test_masked_cells_are_zero(self, tiny, target):
        from hodn.data import cell_mask
        data = generate_dataset(3, 0, tiny)
        masked, cells = mask_dataset(data, target, 1.0, 0)
        total = 0
        for scene in masked:
            for t in scene.triplets:
                m = cell_mask(t.human_box if target == "human" else t.object_box, 4, 4)
                assert np.all(scene.grid[:, m] == 0.0)
                total += int(m.sum())
        assert cells == total

    def test_originals_untouched(self, tiny):
        data = generate_dataset(2, 0, tiny)
        before = [s.grid.copy() for s in data]
        mask_dataset(data, "object", 1.0, 0)
        assert all(np.array_equal(a, s.grid) for a, s in zip(before, data))

    def test_bad_arguments(self, tiny):
        with pytest.raises(ValueError):
            mask_dataset([], "chair", 0.5, 0)
        with pytest.raises(ValueError):
            mask_dataset([], "human", 1.5, 0)
