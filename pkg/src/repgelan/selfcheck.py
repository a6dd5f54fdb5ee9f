"""Quick oracle suites behind ``repgelan selfcheck`` and ``repgelan fuse --check``.

Each check returns a :class:`CheckResult`; sizes are kept small so the whole
suite runs in a few seconds. The test suite runs the same comparisons at
full size.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .boxes import Detection, iou_xyxy
from .config import bundled_config, parse_config
from .cost import conv_cost
from .graph import bn_count, build_graph, fuse_graph, same_graph
from .init import as_rng, random_conv
from .metrics import MatchResult, dataset_ap, pr_metrics
from .oracles import brute_force_ap, direct_conv, grouped_conv_by_parts, raster_iou
from .reparam import RcsBlock, RepVGGBlockTrain, channel_shuffle, reparameterize
from .tensor import conv2d


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail}"


@dataclass(frozen=True)
class FusionCheck:
    max_logit_diff: float
    n_unfused: int
    n_fused: int
    min_iou: float
    max_score_diff: float
    idempotent: bool
    bn_left: int

    def passed(self, iou_tol=0.999, score_tol=1e-3):
        return (self.n_unfused == self.n_fused and self.min_iou >= iou_tol
                and self.max_score_diff <= score_tol and self.idempotent and self.bn_left == 0)


def pair_detections(a, b):
    """Greedily pair each detection of ``a`` with its best same-class
    counterpart in ``b``; returns ``(min IoU, max score diff)`` over pairs."""
    free = list(range(len(b)))
    min_iou, max_diff = 1.0, 0.0
    for d in sorted(a, key=lambda d: -d.score):
        cands = [j for j in free if b[j].class_id == d.class_id]
        if not cands:
            return 0.0, 1.0
        j = max(cands, key=lambda j: iou_xyxy(d.box, b[j].box))
        free.remove(j)
        min_iou = min(min_iou, iou_xyxy(d.box, b[j].box))
        max_diff = max(max_diff, abs(d.score - b[j].score))
    return min_iou, max_diff


def check_fusion(graph, image, conf_thresh=0.25, iou_thresh=0.45):
    """Compare ``graph`` against its fused form on one image."""
    fused = fuse_graph(graph)
    raw_a = graph.forward_raw(image).concatenated()
    raw_b = fused.forward_raw(image).concatenated()
    da = graph.predict_batch(image, conf_thresh, iou_thresh)[0]
    db = fused.predict_batch(image, conf_thresh, iou_thresh)[0]
    min_iou, max_diff = pair_detections(da, db) if len(da) == len(db) else (0.0, 1.0)
    return FusionCheck(
        max_logit_diff=float(np.max(np.abs(raw_a.astype(np.float64) - raw_b))),
        n_unfused=len(da),
        n_fused=len(db),
        min_iou=min_iou,
        max_score_diff=max_diff,
        idempotent=same_graph(fuse_graph(fused), fused),
        bn_left=bn_count(fused),
    )


def _conv_kernels(rng):
    worst = 0.0
    for _ in range(6):
        g = int(rng.choice([1, 2, 4]))
        p = random_conv(rng, 4, 4, int(rng.choice([1, 3])), int(rng.integers(1, 3)), groups=g, bias=True)
        x = rng.standard_normal((1, 4, 7, 6)).astype(np.float32)
        y = conv2d(x, p)
        worst = max(worst, float(np.max(np.abs(y - direct_conv(x, p)))),
                    float(np.max(np.abs(y - grouped_conv_by_parts(x, p)))))
    return CheckResult("conv2d vs loop oracle", worst <= 1e-5, f"max diff {worst:.2e}")


def _reparam(rng):
    worst = 0.0
    for _ in range(32):
        c = int(rng.choice([4, 8]))
        s = int(rng.choice([1, 2]))
        block = RepVGGBlockTrain.random(rng, c, c, stride=s, identity=bool(s == 1 and rng.random() < 0.7))
        x = rng.standard_normal((1, c, 9, 9)).astype(np.float32)
        worst = max(worst, float(np.max(np.abs(block.forward(x) - reparameterize(block).forward(x)))))
    return CheckResult("RepVGG reparameterization", worst <= 1e-4, f"max diff {worst:.2e} over 32 blocks")


def _shuffle(rng):
    x = rng.standard_normal((1, 8, 2, 2)).astype(np.float32)
    once = channel_shuffle(x, 2)
    ok = np.array_equal(channel_shuffle(once, 4), x) and not np.array_equal(once, x)
    return CheckResult("channel shuffle", ok, "g=2 then g=4 restores the input")


def _cost_ratios(rng):
    shape = (1, 8, 16, 16)
    full = conv_cost(random_conv(rng, 8, 8, 3), shape).flops
    ratios = {g: Fraction(conv_cost(random_conv(rng, 8, 8, 3, groups=g), shape).flops, full) for g in (2, 4)}
    rep = RepVGGBlockTrain.random(rng, 8, 8)
    rcs = RcsBlock.random(rng, 8, 8)
    ratio = Fraction(rcs.cost(shape).macs, rep.cost(shape).macs)
    ok = ratios == {2: Fraction(1, 2), 4: Fraction(1, 4)} and ratio == Fraction(1, 2)
    return CheckResult("cost ratios", ok, f"groups {ratios[2]}, {ratios[4]}; RCS/full {ratio}")


def _iou(rng):
    worst = 0.0
    for _ in range(200):
        a, b = ([*sorted(rng.choice(65, 2, replace=False))] for _ in range(2))
        c, d = ([*sorted(rng.choice(65, 2, replace=False))] for _ in range(2))
        box_a = (a[0], c[0], a[1], c[1])
        box_b = (b[0], d[0], b[1], d[1])
        worst = max(worst, abs(iou_xyxy(box_a, box_b) - float(raster_iou(box_a, box_b))))
    return CheckResult("IoU vs raster oracle", worst <= 1e-9, f"max diff {worst:.1e} over 200 pairs")


def random_ap_fixture(rng, max_dets=10, max_gts=5, n_images=2):
    """Small random single-class ``[(dets, gts), ...]`` with overlapping boxes."""
    samples = []
    for _ in range(n_images):
        gts = []
        for _ in range(int(rng.integers(0, max_gts + 1))):
            x, y = (int(v) for v in rng.integers(0, 40, 2))
            gts.append((0, x, y, x + int(rng.integers(4, 20)), y + int(rng.integers(4, 20))))
        dets = []
        for _ in range(int(rng.integers(0, max_dets + 1))):
            if gts and rng.random() < 0.7:
                _, x1, y1, x2, y2 = gts[int(rng.integers(len(gts)))]
                jx, jy = (int(v) for v in rng.integers(-3, 4, 2))
                box = (x1 + jx, y1 + jy, x2 + jx, y2 + jy)
            else:
                x, y = (int(v) for v in rng.integers(0, 40, 2))
                box = (x, y, x + int(rng.integers(4, 20)), y + int(rng.integers(4, 20)))
            # coarse scores so ties occur
            dets.append(Detection(box, int(rng.integers(1, 10)) / 10))
        samples.append((dets, gts))
    return samples


def _ap(rng):
    bad = 0
    for _ in range(40):
        samples = random_ap_fixture(rng)
        thr = float(rng.choice([0.3, 0.5, 0.75]))
        bad += dataset_ap(samples, thr) != brute_force_ap(samples, thr)
    return CheckResult("AP vs rank-sweep oracle", bad == 0, f"{40 - bad}/40 fixtures agree exactly")


def _pr(rng):
    bad = 0
    for _ in range(50):
        tp, fp, fn = (int(v) for v in rng.integers(0, 20, 3))
        p, r, _ = pr_metrics(MatchResult(tp, fp, fn))
        bad += p != (tp / (tp + fp) if tp + fp else 0.0) or r != (tp / (tp + fn) if tp + fn else 0.0)
    ok = bad == 0 and pr_metrics(MatchResult(0, 0, 0)) == (0.0, 0.0, True)
    return CheckResult("precision/recall formulas", ok, f"{50 - bad}/50 triples, empty case flagged")


def _fusion(rng):
    g = build_graph(parse_config(bundled_config("toy.cfg")), 128, seed=int(rng.integers(1 << 16)))
    image = rng.random((1, g.ch, 128, 128)).astype(np.float32)
    r = check_fusion(g, image, conf_thresh=0.01)
    return CheckResult("toy graph fusion", r.passed(),
                       f"{r.n_fused} detections, min IoU {r.min_iou:.6f}, max score diff {r.max_score_diff:.1e}")


CHECKS = (_conv_kernels, _reparam, _shuffle, _cost_ratios, _iou, _ap, _pr, _fusion)


def run_selfcheck(seed=0):
    rng = as_rng(seed)
    return [check(rng) for check in CHECKS]
