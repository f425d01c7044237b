"""Detection metrics at IoU 0.5 and the detector loss terms.

AP50 uses all-points interpolation: the area under the monotone precision
envelope of the dataset-wide precision/recall sweep. AR50 is the fraction of
ground truth matched when every prediction is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .annotations import CLASS_NAMES, BBox, Detection

IOU_THRESHOLD = 0.5


def iou_corners(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two ``(x_min, y_min, x_max, y_max)`` boxes."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def iou(a: BBox, b: BBox) -> float:
    return iou_corners(a.corners, b.corners)


def iou_loss(a: BBox, b: BBox) -> float:
    return 1.0 - iou(a, b)


# ---------------------------------------------------------------------------
# Matching and AP/AR
# ---------------------------------------------------------------------------


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    unmatched_predictions: List[int] = field(default_factory=list)
    unmatched_ground_truth: List[int] = field(default_factory=list)


def match_greedy(preds: Sequence[Detection], gts: Sequence[BBox], thr: float = IOU_THRESHOLD) -> MatchResult:
    """Match predictions (already sorted by descending confidence) to ground truth.

    Each prediction in turn claims the unclaimed ground-truth box with the
    highest IoU, provided it reaches ``thr``; ties go to the lower index.
    """
    claimed = [False] * len(gts)
    result = MatchResult()
    for i, p in enumerate(preds):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if claimed[j]:
                continue
            v = iou(p.bbox, g)
            if v >= thr and v > best_iou:
                best, best_iou = j, v
        if best < 0:
            result.unmatched_predictions.append(i)
        else:
            claimed[best] = True
            result.pairs.append((i, best, best_iou))
    result.unmatched_ground_truth = [j for j, c in enumerate(claimed) if not c]
    return result


def sort_predictions(preds: Sequence[Detection]) -> List[Detection]:
    return sorted(preds, key=lambda d: (-d.score, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h))


def all_points_ap(tp: Sequence[bool], n_gt: int) -> float:
    """Area under the precision envelope for a ranked list of TP/FP flags.

    Each true positive contributes the best precision reached at its rank or
    later. The sum is kept in exact rationals and rounded once, so equal
    inputs give the correctly rounded AP regardless of list length.
    """
    if n_gt == 0:
        raise ValueError("AP is undefined without ground truth")
    hits = [bool(f) for f in tp]
    n_tp = sum(hits)
    # Walk from the bottom of the ranking, tracking the envelope as (tp, rank).
    best = (0, 1)
    weights: Dict[Tuple[int, int], int] = {}
    cum = n_tp
    for rank in range(len(hits), 0, -1):
        if cum * best[1] > best[0] * rank:
            best = (cum, rank)
        if hits[rank - 1]:
            weights[best] = weights.get(best, 0) + 1
            cum -= 1
    total = sum((Fraction(count * t, k) for (t, k), count in weights.items()), Fraction(0))
    return float(total / n_gt)


@dataclass
class ClassMetrics:
    ap50: Optional[float]
    ar50: Optional[float]
    tp: int
    fp: int
    fn: int
    n_gt: int
    n_pred: int


@dataclass
class EvalReport:
    classes: Dict[int, ClassMetrics]
    n_images: int
    missing_predictions: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "missing_predictions": list(self.missing_predictions),
            "classes": {
                CLASS_NAMES[c]: {
                    "ap50": m.ap50,
                    "ar50": m.ar50,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                    "n_gt": m.n_gt,
                    "n_pred": m.n_pred,
                }
                for c, m in sorted(self.classes.items())
            },
        }

    def format_table(self) -> str:
        def pct(v):
            return "absent" if v is None else f"{100 * v:.2f}%"

        rows = [("Class", "AP50", "AR50", "TP", "FP", "FN")]
        for c, m in sorted(self.classes.items()):
            rows.append((CLASS_NAMES[c].capitalize(), pct(m.ap50), pct(m.ar50), str(m.tp), str(m.fp), str(m.fn)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
        lines = [sep]
        for k, r in enumerate(rows):
            lines.append("|" + "|".join(f" {cell:<{w}} " if i == 0 else f" {cell:>{w}} " for i, (cell, w) in enumerate(zip(r, widths))) + "|")
            if k == 0:
                lines.append(sep)
        lines.append(sep)
        lines.append(f"images: {self.n_images}")
        return "\n".join(lines)


def evaluate_class(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[Detection]],
    class_id: int,
    thr: float = IOU_THRESHOLD,
) -> ClassMetrics:
    """Dataset-level AP50/AR50 for one class; images are keyed by image_id."""
    ranked = []  # (score, image order, rank within image, is_tp)
    n_gt = 0
    for order, image_id in enumerate(sorted(set(preds) | set(gts))):
        g = [d.bbox for d in gts.get(image_id, ()) if d.class_id == class_id]
        p = sort_predictions([d for d in preds.get(image_id, ()) if d.class_id == class_id])
        n_gt += len(g)
        matched = {i for i, _, _ in match_greedy(p, g, thr).pairs}
        ranked.extend((-d.score, order, i, i in matched) for i, d in enumerate(p))
    ranked.sort()
    flags = [r[3] for r in ranked]
    tp = sum(flags)
    if n_gt == 0:
        ap = ar = None
    else:
        ap = all_points_ap(flags, n_gt)
        ar = tp / n_gt
    return ClassMetrics(ap, ar, tp, len(flags) - tp, n_gt - tp, n_gt, len(flags))


def average_precision_50(preds, gts, class_id: int) -> Tuple[Optional[float], Optional[float]]:
    """(AP50, AR50) for ``class_id``; both None when the class has no ground truth."""
    m = evaluate_class(preds, gts, class_id)
    return m.ap50, m.ar50


def evaluate(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[Detection]],
    classes: Sequence[int] = tuple(CLASS_NAMES),
    thr: float = IOU_THRESHOLD,
) -> EvalReport:
    missing = sorted(set(gts) - set(preds))
    metrics = {c: evaluate_class(preds, gts, c, thr) for c in classes}
    return EvalReport(metrics, len(set(preds) | set(gts)), missing)


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def focal_loss(p: float, t: int, alpha: float = 0.25, gamma_f: float = 2.0) -> Tuple[float, float]:
    """Alpha-balanced focal loss and its derivative with respect to ``p``.

    Callers should clamp probabilities to ``[1e-7, 1 - 1e-7]``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"focal loss needs p in (0, 1), got {p}")
    if t == 1:
        q = 1.0 - p
        loss = -alpha * q**gamma_f * math.log(p)
        grad = -alpha * q**gamma_f / p
        if gamma_f:
            grad += alpha * gamma_f * q ** (gamma_f - 1.0) * math.log(p)
    elif t == 0:
        loss = -(1.0 - alpha) * p**gamma_f * math.log1p(-p)
        dpow = gamma_f * p ** (gamma_f - 1.0) if gamma_f else 0.0
        grad = -(1.0 - alpha) * (dpow * math.log1p(-p) - p**gamma_f / (1.0 - p))
    else:
        raise ValueError(f"target must be 0 or 1, got {t}")
    return loss, grad


def _check_distribution(name, d, positive):
    d = np.asarray(d, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D distribution")
    if positive and np.any(d <= 0):
        raise ValueError(f"{name} must have strictly positive entries")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError(f"{name} must have finite non-negative entries")
    if abs(math.fsum(d) - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, got {math.fsum(d)!r}")
    return d


def kl_divergence(P, Q) -> float:
    """KL(P || Q) in nats. Zero entries of P contribute nothing."""
    P = _check_distribution("P", P, positive=False)
    Q = _check_distribution("Q", Q, positive=True)
    if P.shape != Q.shape:
        raise ValueError(f"P and Q differ in length: {P.size} vs {Q.size}")
    nz = P > 0
    return math.fsum(P[nz] * np.log(P[nz] / Q[nz]))


@dataclass(frozen=True)
class LossTerms:
    iou: float = 0.0
    cls: float = 0.0
    obj: float = 0.0
    kl: float = 0.0


def total_loss(terms: LossTerms, lam: float = 5.0, gamma_w: float = 1.0) -> float:
    """``lam * iou + cls + obj + gamma_w * kl``."""
    values = (terms.iou, terms.cls, terms.obj, terms.kl)
    if any(not math.isfinite(v) or v < 0 for v in values):
        raise ValueError(f"loss terms must be finite and non-negative, got {values}")
    if lam < 0 or gamma_w < 0:
        raise ValueError("loss weights must be non-negative")
    return math.fsum((lam * terms.iou, terms.cls, terms.obj, gamma_w * terms.kl))
