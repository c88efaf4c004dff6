"""Evaluation metrics: semantic IoU, instance AP/AP50, flow MSE with u/v breakdown."""
from __future__ import annotations

from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .fields import NUM_CLASSES, FlowField, InstanceMask, SemanticMap, mask_iou

AP_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
MOVING_CLASSES = tuple(range(1, NUM_CLASSES + 1))


# ---------------------------------------------------------------------------
# semantic IoU


def _labels(m) -> np.ndarray:
    return m.labels if isinstance(m, SemanticMap) else np.asarray(m)


def iou_counts(pred, gt, classes=MOVING_CLASSES) -> np.ndarray:
    """(n_classes, 2) array of [intersection, union] pixel counts."""
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"semantic maps differ in shape: {p.shape} vs {g.shape}")
    out = np.zeros((len(classes), 2), dtype=np.int64)
    for k, c in enumerate(classes):
        pc, gc = p == c, g == c
        out[k] = (np.count_nonzero(pc & gc), np.count_nonzero(pc | gc))
    return out


def _from_counts(counts: np.ndarray, classes) -> Dict:
    per_class = {}
    for c, (inter, union) in zip(classes, counts):
        if union > 0:
            per_class[int(c)] = inter / union
    mean = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return {"per_class": per_class, "mean": mean}


def semantic_iou(pred, gt, classes=MOVING_CLASSES) -> Dict:
    """Per-class IoU and their mean; classes absent from both maps are skipped."""
    return _from_counts(iou_counts(pred, gt, classes), classes)


def dataset_semantic_iou(preds: Sequence, gts: Sequence, classes=MOVING_CLASSES) -> Dict:
    """IoU with intersections and unions accumulated over all image pairs."""
    if len(preds) != len(gts):
        raise ShapeError("prediction and ground-truth lists differ in length")
    total = np.zeros((len(classes), 2), dtype=np.int64)
    for p, g in zip(preds, gts):
        total += iou_counts(p, g, classes)
    return _from_counts(total, classes)


# ---------------------------------------------------------------------------
# average precision


class APResult(NamedTuple):
    ap: float
    ap50: float
    per_class: Dict[int, np.ndarray]   # class -> AP at every threshold
    thresholds: tuple


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    # precision envelope: max precision at any recall >= r
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _class_candidates(preds, gts, c):
    """Predictions of class ``c`` in ranking order with their IoU rows against same-class gts."""
    order = []   # (neg score, image, pred idx)
    ious = {}
    n_gt = 0
    for k, (pimg, gimg) in enumerate(zip(preds, gts)):
        gc = [g for g in gimg if g.class_id == c]
        n_gt += len(gc)
        for i, p in enumerate(pimg):
            if p.class_id == c:
                order.append((-p.score, k, i))
                ious[(k, i)] = np.array([mask_iou(p.mask, g.mask) for g in gc])
    order.sort()
    return order, ious, n_gt


def _greedy_tp(order, ious, thr: float) -> np.ndarray:
    taken = {}
    tp = np.zeros(len(order))
    for r, (_, k, i) in enumerate(order):
        used = taken.setdefault(k, set())
        best, best_j = -1.0, -1
        for j, v in enumerate(ious[(k, i)]):
            if j in used or v < thr:
                continue
            if v > best:
                best, best_j = v, j
        if best_j >= 0:
            used.add(best_j)
            tp[r] = 1
    return tp


def average_precision(preds: Sequence[Sequence[InstanceMask]],
                      gts: Sequence[Sequence[InstanceMask]],
                      iou_thresholds: Sequence[float] = AP_THRESHOLDS) -> APResult:
    """COCO-style mask AP: greedy matching by score, all-point interpolation.

    AP of each class is averaged over the thresholds; the result is the mean
    over classes that have at least one (non-empty) ground-truth instance.
    """
    if len(preds) != len(gts):
        raise ShapeError("need one prediction list per ground-truth image")
    thresholds = tuple(float(t) for t in iou_thresholds)
    for img in preds:
        for p in img:
            if getattr(p, "score", None) is None:
                raise ConfigError("every prediction needs a confidence score")
    gts = [[g for g in img if not g.empty] for img in gts]
    classes = sorted({g.class_id for img in gts for g in img})

    per_class = {}
    for c in classes:
        order, ious, n_gt = _class_candidates(preds, gts, c)
        per_class[c] = np.array([_interpolated_ap(_greedy_tp(order, ious, thr), n_gt)
                                 for thr in thresholds])
    if not per_class:
        nan = float("nan")
        return APResult(nan, nan, {}, thresholds)
    table = np.stack([per_class[c] for c in classes])
    ap = float(table.mean(axis=1).mean())
    ap50 = float(table[:, thresholds.index(0.5)].mean()) if 0.5 in thresholds else float("nan")
    return APResult(ap, ap50, per_class, thresholds)


def pr_curve(preds, gts, iou_threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """Recall and precision of all classes pooled by score, for plotting."""
    gts = [[g for g in img if not g.empty] for img in gts]
    scores, hits, n_gt = [], [], 0
    for c in sorted({g.class_id for img in gts for g in img}):
        order, ious, n = _class_candidates(preds, gts, c)
        n_gt += n
        scores += [-o[0] for o in order]
        hits += list(_greedy_tp(order, ious, iou_threshold))
    if n_gt == 0 or not scores:
        return np.zeros(0), np.zeros(0)
    idx = np.argsort(-np.asarray(scores), kind="stable")
    ctp = np.cumsum(np.asarray(hits)[idx])
    return ctp / n_gt, ctp / np.arange(1, len(idx) + 1)


# ---------------------------------------------------------------------------
# flow error


def flow_mse(pred: Sequence[FlowField], gt: Sequence[FlowField]) -> List[Dict[str, float]]:
    """Per-step MSE overall and per component; ``mse == (mse_u + mse_v) / 2``."""
    if len(pred) != len(gt):
        raise ShapeError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    out = []
    for p, g in zip(pred, gt):
        if p.shape != g.shape:
            raise ShapeError(f"flow shapes differ: {p.shape} vs {g.shape}")
        mu = float(np.mean((p.u.astype(np.float64) - g.u) ** 2))
        mv = float(np.mean((p.v.astype(np.float64) - g.v) ** 2))
        out.append({"mse": (mu + mv) / 2.0, "mse_u": mu, "mse_v": mv})
    return out


def mean_flow_mse(per_sequence: Sequence[List[Dict[str, float]]]) -> List[Dict[str, float]]:
    """Average per-step MSE dictionaries over sequences."""
    if not per_sequence:
        return []
    n = len(per_sequence[0])
    return [{k: float(np.mean([s[i][k] for s in per_sequence])) for k in ("mse", "mse_u", "mse_v")}
            for i in range(n)]
