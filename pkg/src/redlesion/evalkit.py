"""Per-lesion FROC/CPM evaluation and per-image DR-screening ROC/AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import iou

CPM_REFERENCE_FPI = (1 / 8, 1 / 4, 1 / 2, 1, 2, 4, 8)


class EvalError(ValueError):
    pass


@dataclass
class MatchPolicy:
    mode: str = "center-in-region"  # or "iou"
    iou_min: float = 0.2

    def matches(self, detection_box, gt_box):
        if self.mode == "center-in-region":
            return gt_box.contains(detection_box.r, detection_box.c)
        if self.mode == "iou":
            return iou(detection_box, gt_box) >= self.iou_min
        raise EvalError(f"MatchPolicy: unknown mode {self.mode!r}")


@dataclass
class FrocPoint:
    fpi: float
    sensitivity: float
    threshold: float


@dataclass
class FrocCurve:
    points: list  # FrocPoint, ordered by descending threshold


def match_detections(detections, gt_lesions, policy=None):
    """Greedy one-to-one matching by descending score.

    Each ground-truth lesion is matched at most once; among the gt boxes a
    detection is allowed to match, the best-IoU one is taken. Returns
    (tp, fp, fn).
    """
    policy = policy or MatchPolicy()
    taken = [False] * len(gt_lesions)
    tp = fp = 0
    for det in sorted(detections, key=lambda d: -d.score):
        best, best_iou = None, -1.0
        for gi, g in enumerate(gt_lesions):
            if taken[gi] or not policy.matches(det.box, g):
                continue
            val = iou(det.box, g)
            if val > best_iou:
                best, best_iou = gi, val
        if best is None:
            fp += 1
        else:
            taken[best] = True
            tp += 1
    fn = taken.count(False)
    return tp, fp, fn


def froc_curve(per_image_detections, per_image_gt, policy=None, thresholds=None):
    """FROC over a set of images.

    For each threshold, detections with score >= threshold are matched
    per image; sensitivity = total tp / total lesions and FPI = total fp /
    image count.
    """
    n_images = len(per_image_detections)
    if n_images == 0 or n_images != len(per_image_gt):
        raise EvalError("froc_curve: need matching non-empty detection/gt lists")
    total_gt = sum(len(g) for g in per_image_gt)
    if total_gt == 0:
        raise EvalError("froc_curve: no ground-truth lesions, sensitivity undefined")
    if thresholds is None:
        thresholds = np.linspace(1.0, 0.0, 100)
    thresholds = sorted(set(float(t) for t in thresholds), reverse=True)

    policy = policy or MatchPolicy()
    points = []
    for t in thresholds:
        tp_total = fp_total = 0
        for dets, gt in zip(per_image_detections, per_image_gt):
            kept = [d for d in dets if d.score >= t]
            tp, fp, _ = match_detections(kept, gt, policy)
            tp_total += tp
            fp_total += fp
        points.append(FrocPoint(
            fpi=fp_total / n_images,
            sensitivity=tp_total / total_gt,
            threshold=t,
        ))
    return FrocCurve(points=points)


def cpm_score(curve: FrocCurve, reference_fpi=CPM_REFERENCE_FPI):
    """Mean sensitivity at the reference FPI points.

    At each reference the operating point with the largest FPI <= reference
    is used (step-function convention); 0 if no point qualifies.
    """
    if not curve.points:
        raise EvalError("cpm_score: empty curve")
    sens = []
    for ref in reference_fpi:
        eligible = [p for p in curve.points if p.fpi <= ref]
        if not eligible:
            sens.append(0.0)
            continue
        best_fpi = max(p.fpi for p in eligible)
        sens.append(max(p.sensitivity for p in eligible if p.fpi == best_fpi))
    return float(np.mean(sens))


def per_image_probability(detections):
    """Max detection score of an image; 0 with no detections."""
    return max((d.score for d in detections), default=0.0)


def roc_auc(probabilities, labels):
    """AUC as the rank statistic: P(random positive outranks a random
    negative), ties counted 1/2. labels: truthy = DR."""
    probs = np.asarray(probabilities, dtype=np.float64)
    labs = np.asarray([bool(l) for l in labels])
    n_pos, n_neg = int(labs.sum()), int((~labs).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvalError("roc_auc: need both classes")
    order = np.argsort(probs, kind="mergesort")
    ranks = np.empty_like(probs)
    ranks[order] = np.arange(1, probs.size + 1)
    # average ranks over ties
    for v in np.unique(probs):
        sel = probs == v
        ranks[sel] = ranks[sel].mean()
    u = ranks[labs].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
