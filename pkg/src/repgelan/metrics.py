"""Detection metrics: greedy matching, precision/recall, all-point AP and the
mean over a range of IoU thresholds.

Ground truths are ``(class_id, x1, y1, x2, y2)`` tuples in pixels;
detections are :class:`~repgelan.boxes.Detection` objects.

AP is accumulated with exact rationals (counts are integers, so every
precision and recall value is a fraction) and rounded once at the end.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

from .boxes import iou_xyxy


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    assignment: dict = field(default_factory=dict)  # detection index -> ground-truth index

    def is_tp(self, det_index):
        return det_index in self.assignment


class PRMetrics(NamedTuple):
    precision: float
    recall: float
    empty: bool  # a zero denominator was replaced by 0


def score_order(dets):
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(dets, gts, iou_thresh=0.5):
    """Each detection, best first, claims the unclaimed same-class ground
    truth with the highest IoU >= ``iou_thresh``."""
    claimed = set()
    assignment = {}
    for i in score_order(dets):
        d = dets[i]
        best, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if j in claimed or g[0] != d.class_id:
                continue
            iou = iou_xyxy(d.box, g[1:])
            if iou >= iou_thresh and iou > best_iou:
                best, best_iou = j, iou
        if best is not None:
            claimed.add(best)
            assignment[i] = best
    tp = len(assignment)
    return MatchResult(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, assignment=assignment)


def pr_metrics(m):
    """Precision = TP / (TP + FP), recall = TP / (TP + FN); 0 on an empty denominator."""
    empty = False
    if m.tp + m.fp:
        precision = m.tp / (m.tp + m.fp)
    else:
        precision, empty = 0.0, True
    if m.tp + m.fn:
        recall = m.tp / (m.tp + m.fn)
    else:
        recall, empty = 0.0, True
    return PRMetrics(precision, recall, empty)


def _ranked_ap(hits, n_gt):
    if n_gt == 0:
        return Fraction(0)
    precisions = []
    tp = 0
    for k, hit in enumerate(hits, start=1):
        tp += bool(hit)
        precisions.append(Fraction(tp, k))
    area = Fraction(0)
    envelope = Fraction(0)
    for k in range(len(hits) - 1, -1, -1):
        envelope = max(envelope, precisions[k])
        if hits[k]:
            area += envelope
    return area / n_gt


def ap_from_ranked(hits, n_gt):
    """All-point interpolated AP of a ranked TP/FP sequence.

    ``hits[k]`` tells whether the detection at rank ``k`` is a true positive.
    Precision is replaced by its running maximum from the right before the
    area under the curve is taken; recall only moves at true positives.
    """
    return float(_ranked_ap(hits, n_gt))


def _dataset_ap(samples, iou_thresh):
    classes = sorted({g[0] for _, gts in samples for g in gts})
    if not classes:
        return Fraction(0)
    aps = []
    for c in classes:
        ranked = []  # (score, image, det index, hit)
        n_gt = 0
        for img, (dets, gts) in enumerate(samples):
            cdets = [d for d in dets if d.class_id == c]
            cgts = [g for g in gts if g[0] == c]
            n_gt += len(cgts)
            m = match_detections(cdets, cgts, iou_thresh)
            ranked.extend((d.score, img, i, m.is_tp(i)) for i, d in enumerate(cdets))
        ranked.sort(key=lambda r: (-r[0], r[1], r[2]))
        aps.append(_ranked_ap([r[3] for r in ranked], n_gt))
    return sum(aps) / len(aps)


def dataset_ap(samples, iou_thresh=0.5):
    """Mean over ground-truth classes of the AP of ``[(dets, gts), ...]``."""
    return float(_dataset_ap(samples, iou_thresh))


def average_precision(dets, gts, iou_thresh=0.5):
    """AP of one image's detections."""
    return dataset_ap([(dets, gts)], iou_thresh)


def iou_thresholds(lo=0.5, hi=0.95, step=0.05):
    if lo > hi:
        raise ValueError(f"lo={lo} exceeds hi={hi}")
    n = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


def dataset_map_range(samples, lo=0.5, hi=0.95, step=0.05):
    ts = iou_thresholds(lo, hi, step)
    return float(sum(_dataset_ap(samples, t) for t in ts) / len(ts))


def map_range(dets, gts, lo=0.5, hi=0.95, step=0.05):
    """Mean AP over IoU thresholds ``lo, lo + step, ..., hi``."""
    return dataset_map_range([(dets, gts)], lo, hi, step)
