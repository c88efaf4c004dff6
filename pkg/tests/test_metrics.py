import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ap_oracle import brute_force_ap
from futureseg.errors import ShapeError
from futureseg.fields import FlowField, InstanceMask, SemanticMap
from futureseg.metrics import (
    AP_THRESHOLDS, average_precision, dataset_semantic_iou, flow_mse, semantic_iou,
)


def test_ap_thresholds():
    assert AP_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_semantic_iou_examples():
    g = np.zeros((4, 4), np.uint8)
    g[0, :] = 1
    g[1, :] = 2
    g[2, :] = 3
    r = semantic_iou(g, g)
    assert r["per_class"] == {1: 1.0, 2: 1.0, 3: 1.0} and r["mean"] == 1.0
    gt1 = np.zeros((4, 4), np.uint8)
    gt1[:2, :2] = 1
    r = semantic_iou(np.zeros((4, 4), np.uint8), gt1)
    assert r["per_class"] == {1: 0.0} and r["mean"] == 0.0
    pred = np.zeros((4, 4), np.uint8)
    pred[:2, 1:3] = 1   # half overlaps the gt square
    r = semantic_iou(SemanticMap(pred), SemanticMap(gt1))
    assert r["per_class"][1] == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ShapeError):
        semantic_iou(np.zeros((2, 2)), np.zeros((3, 3)))


@given(st.integers(0, 10 ** 6))
def test_semantic_iou_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 4, (6, 6)), rng.integers(0, 4, (6, 6))
    assert semantic_iou(a, b) == semantic_iou(b, a)


def test_dataset_iou_accumulates_counts():
    a = np.array([[1, 0]])
    b = np.array([[1, 1]])
    r = dataset_semantic_iou([a, a], [a, b])
    assert r["per_class"][1] == pytest.approx(2 / 3)


def inst(mask, cls=1, score=0.5):
    return InstanceMask(0, cls, score, np.asarray(mask, bool))


def test_ap_identical_and_empty():
    rng = np.random.default_rng(0)
    gts = [[inst(rng.random((6, 6)) < 0.4, c) for c in (1, 2)] for _ in range(3)]
    preds = [[g.replace(score=float(rng.random())) for g in img] for img in gts]
    r = average_precision(preds, gts)
    assert r.ap == 1.0 and r.ap50 == 1.0
    r = average_precision([[] for _ in gts], gts)
    assert r.ap == 0.0 and r.ap50 == 0.0


def test_ap_two_gts_three_preds_against_oracle():
    g1 = np.zeros((6, 6), bool)
    g1[0:2, 0:3] = True
    g2 = np.zeros((6, 6), bool)
    g2[3:6, 3:6] = True
    p1 = g1.copy()                  # IoU 1 with g1
    p2 = np.zeros((6, 6), bool)
    p2[3:6, 4:6] = True             # IoU 6/9 with g2
    p3 = np.zeros((6, 6), bool)
    p3[0:2, 1:3] = True             # IoU 4/6 with g1 (duplicate)
    gts = [[inst(g1), inst(g2)]]
    preds = [[inst(p3, score=0.9), inst(p1, score=0.8), inst(p2, score=0.3)]]
    r = average_precision(preds, gts)
    ap, ap50 = brute_force_ap(preds, gts, AP_THRESHOLDS)
    assert r.ap == pytest.approx(float(ap), abs=1e-12)
    assert r.ap50 == pytest.approx(float(ap50), abs=1e-12)
    # hand check at IoU 0.5: p3 TP (g1), p1 FP (g1 taken), p2 TP -> P = 1, 1/2, 2/3
    assert r.per_class[1][0] == pytest.approx(0.5 * 1 + 0.5 * (2 / 3))


def _micro_case(rng):
    n_img = int(rng.integers(1, 3))
    preds, gts = [], []
    for _ in range(n_img):
        shape = (5, 5)
        ng = int(rng.integers(1, 3))
        gi = [inst(rng.random(shape) < 0.45, int(rng.integers(1, 4))) for _ in range(ng)]
        pi = []
        for _ in range(int(rng.integers(0, 3))):
            if rng.random() < 0.7 and gi:
                src = gi[int(rng.integers(len(gi)))]
                m = src.mask ^ (rng.random(shape) < rng.uniform(0, 0.3))
                cls = src.class_id if rng.random() < 0.85 else int(rng.integers(1, 4))
            else:
                m, cls = rng.random(shape) < 0.4, int(rng.integers(1, 4))
            score = float(rng.choice([0.2, 0.5, 0.7, rng.random()]))
            pi.append(inst(m, cls, score))
        gts.append(gi)
        preds.append(pi)
    return preds, gts


def test_ap_matches_brute_force_oracle_micro_cases():
    rng = np.random.default_rng(1234)
    checked = 0
    while checked < 200:
        preds, gts = _micro_case(rng)
        if sum(map(len, preds)) + sum(map(len, gts)) > 7:
            continue
        ap, ap50 = brute_force_ap(preds, gts, AP_THRESHOLDS)
        if ap is None:
            continue
        r = average_precision(preds, gts)
        assert r.ap == pytest.approx(float(ap), abs=1e-12)
        assert r.ap50 == pytest.approx(float(ap50), abs=1e-12)
        checked += 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_ap_monotone_in_threshold_and_rank_only(seed):
    rng = np.random.default_rng(seed)
    preds, gts = _micro_case(rng)
    r = average_precision(preds, gts)
    if np.isnan(r.ap):
        return
    for aps in r.per_class.values():
        assert np.all(np.diff(aps) <= 1e-12)
    squashed = [[p.replace(score=p.score ** 3 * 0.5) for p in img] for img in preds]
    r2 = average_precision(squashed, gts)
    assert r2.ap == r.ap and r2.ap50 == r.ap50


def test_ap_requires_one_list_per_image():
    with pytest.raises(ShapeError):
        average_precision([[]], [[], []])


def test_flow_mse_examples():
    z = FlowField.zeros(3, 4)
    assert flow_mse([z], [z]) == [{"mse": 0.0, "mse_u": 0.0, "mse_v": 0.0}]
    one = FlowField(np.ones((3, 4)), np.zeros((3, 4)))
    assert flow_mse([one], [z]) == [{"mse": 0.5, "mse_u": 1.0, "mse_v": 0.0}]
    rng = np.random.default_rng(0)
    a = FlowField(rng.normal(size=(5, 5)), rng.normal(size=(5, 5)))
    b = FlowField(rng.normal(size=(5, 5)), rng.normal(size=(5, 5)))
    (r,) = flow_mse([a], [b])
    assert r["mse"] == pytest.approx((r["mse_u"] + r["mse_v"]) / 2, abs=1e-15)
    with pytest.raises(ShapeError):
        flow_mse([a], [])
