"""Slow reference computations used by the self-check and the test suite.

Each one is written independently of the production code path it checks.
"""

from fractions import Fraction

import numpy as np

from .tensor import ConvParams, conv2d


def raster_iou(a, b, grid=64):
    """IoU of integer boxes by counting covered unit cells of a ``grid x grid`` raster."""
    ys, xs = np.mgrid[0:grid, 0:grid]

    def mask(box):
        x1, y1, x2, y2 = box
        return (xs >= x1) & (xs < x2) & (ys >= y1) & (ys < y2)

    ma, mb = mask(a), mask(b)
    inter = int(np.count_nonzero(ma & mb))
    union = int(np.count_nonzero(ma | mb))
    return Fraction(inter, union)


def _iou_exact(a, b):
    # rational IoU on the raw coordinates, no shared code with iou_xyxy
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else Fraction(0)
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def _greedy_tp(dets, gts, thr):
    """Number of true positives among ``dets`` (assumed already score-sorted)."""
    used = [False] * len(gts)
    tp = 0
    for d in dets:
        cands = [(_iou_exact(d.box, g[1:]), -j, j) for j, g in enumerate(gts)
                 if not used[j] and g[0] == d.class_id]
        cands = [c for c in cands if c[0] >= Fraction(thr).limit_denominator(10**9)]
        if cands:
            _, _, j = max(cands)
            used[j] = True
            tp += 1
    return tp


def brute_force_ap(samples, thr=0.5):
    """AP by re-matching every top-k prefix from scratch and integrating the
    interpolated precision step function over recall. Single class."""
    n_gt = sum(len(g) for _, g in samples)
    if n_gt == 0:
        return 0.0
    ranked = []
    for img, (dets, _) in enumerate(samples):
        for i, d in enumerate(dets):
            ranked.append((-d.score, img, i))
    ranked.sort()
    points = []
    for k in range(1, len(ranked) + 1):
        top = ranked[:k]
        tp = 0
        for img, (dets, gts) in enumerate(samples):
            mine = [dets[i] for _, im, i in top if im == img]
            tp += _greedy_tp(mine, gts, thr)
        points.append((Fraction(tp, n_gt), Fraction(tp, k)))
    levels = sorted({r for r, _ in points if r > 0})
    area = Fraction(0)
    prev = Fraction(0)
    for r in levels:
        best = max(p for rr, p in points if rr >= r)
        area += (r - prev) * best
        prev = r
    return float(area)


def grouped_conv_by_parts(x, p):
    """Grouped convolution as ``groups`` independent ungrouped convolutions."""
    g = p.groups
    cg = p.in_ch // g
    og = p.out_ch // g
    parts = []
    for i in range(g):
        sub = ConvParams(p.weight[i * og:(i + 1) * og], None if p.bias is None else p.bias[i * og:(i + 1) * og],
                         p.stride, p.padding, 1)
        parts.append(conv2d(x[:, i * cg:(i + 1) * cg], sub))
    return np.concatenate(parts, axis=1)


def direct_conv(x, p):
    """Plain nested-loop convolution in float64 (tiny inputs only)."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    o, cg, kh, kw = p.weight.shape
    s, pad, g = p.stride, p.padding, p.groups
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // s + 1
    wo = (w + 2 * pad - kw) // s + 1
    out = np.zeros((n, o, ho, wo))
    og = o // g
    for b in range(n):
        for oc in range(o):
            grp = oc // og
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, grp * cg:(grp + 1) * cg, i * s:i * s + kh, j * s:j * s + kw]
                    out[b, oc, i, j] = float(np.sum(patch * p.weight[oc].astype(np.float64)))
            if p.bias is not None:
                out[b, oc] += float(p.bias[oc])
    return out
