"""Anchor-free detection head: per-level box/class conv stacks, anchor
points generated from feature-map shapes, distribution (DFL) box decoding,
sigmoid class scores, bias initialization and greedy NMS.

Each box side is predicted as a distribution over ``reg_max`` integer
distance bins; the decoded distance is the expectation of its softmax.
"""

import math
from dataclasses import dataclass

import numpy as np

from .blocks import ConvUnit
from .boxes import Detection
from .cost import conv_cost, total
from .exceptions import DimensionError
from .init import as_rng, random_conv
from .tensor import ConvParams, concat_channels, conv2d, sigmoid64, softmax_last
from .validation import DTYPE

REG_MAX = 16
ANCHOR_OFFSET = 0.5
DEFAULT_CONF = 0.25
DEFAULT_IOU = 0.45


def make_divisible(x, divisor):
    return int(math.ceil(x / divisor) * divisor)


@dataclass(frozen=True)
class AnchorGrid:
    """Anchor centers in grid units, shape ``(P, 2)`` as ``(x, y)``, and the
    pixel stride of each point, shape ``(P,)``."""

    points: np.ndarray
    strides: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def make_anchors(shapes, strides, offset=ANCHOR_OFFSET):
    """Row-major cell centers for every detection level, levels in order."""
    if not shapes:
        raise ValueError("make_anchors needs at least one feature shape")
    if len(shapes) != len(strides):
        raise ValueError(f"{len(shapes)} feature shapes but {len(strides)} strides")
    points, per_point = [], []
    for (h, w), s in zip(shapes, strides):
        if s <= 0:
            raise ValueError(f"stride must be positive, got {s}")
        sy, sx = np.meshgrid(np.arange(h, dtype=np.float64) + offset, np.arange(w, dtype=np.float64) + offset, indexing="ij")
        points.append(np.stack([sx.ravel(), sy.ravel()], axis=1))
        per_point.append(np.full(h * w, float(s)))
    return AnchorGrid(np.concatenate(points), np.concatenate(per_point))


@dataclass(frozen=True)
class RawPrediction:
    """Head output: one ``(n, 4*reg_max + nc, h, w)`` tensor per level."""

    layers: tuple
    reg_max: int
    nc: int

    def __post_init__(self):
        want = 4 * self.reg_max + self.nc
        for i, t in enumerate(self.layers):
            if t.shape[1] != want:
                raise DimensionError(f"level {i} has {t.shape[1]} channels, expected {want}")

    @property
    def shapes(self):
        return [t.shape[2:] for t in self.layers]

    @property
    def batch(self):
        return self.layers[0].shape[0]

    def concatenated(self):
        """``(n, 4*reg_max + nc, P)`` with levels concatenated point-wise."""
        n = self.batch
        return np.concatenate([t.reshape(n, t.shape[1], -1) for t in self.layers], axis=2)


def init_detect_bias(nc, strides, image_size, reg_max=REG_MAX):
    """Per-level ``(box_bias, class_bias)`` starting values.

    Box logits start at 1.0; class logits at ``ln(5 / nc / (image_size / stride)**2)``,
    i.e. a prior of roughly five objects per image spread over the level's cells.
    """
    out = []
    for s in strides:
        if s <= 0:
            raise ValueError(f"stride must be positive, got {s}")
        cls_bias = math.log(5.0 / nc / (image_size / s) ** 2)
        out.append((np.ones(4 * reg_max, dtype=DTYPE), np.full(nc, cls_bias, dtype=DTYPE)))
    return out


@dataclass(frozen=True, eq=False)
class DDetect:
    """Per level: box stack (3x3, grouped 3x3, 1x1 -> 4*reg_max) and class
    stack (3x3, 3x3, 1x1 -> nc)."""

    box_stacks: tuple  # per level: (ConvUnit, ConvUnit, ConvParams)
    cls_stacks: tuple
    nc: int
    reg_max: int = REG_MAX

    def __post_init__(self):
        if len(self.box_stacks) != len(self.cls_stacks) or not self.box_stacks:
            raise ValueError("DDetect needs matching, non-empty box and class stacks")
        for b, c in zip(self.box_stacks, self.cls_stacks):
            if b[2].out_ch != 4 * self.reg_max or c[2].out_ch != self.nc:
                raise DimensionError("DDetect final convs do not match reg_max / nc")

    @classmethod
    def random(cls, seed, nc, ch, strides, image_size, reg_max=REG_MAX):
        rng = as_rng(seed)
        c2 = make_divisible(max(ch[0] // 4, reg_max * 4, 16), 4)
        c3 = max(ch[0], min(nc * 2, 128))
        biases = init_detect_bias(nc, strides, image_size, reg_max)
        box, cl = [], []
        for x, (box_bias, cls_bias) in zip(ch, biases):
            fb = random_conv(rng, c2, 4 * reg_max, 1)
            fc = random_conv(rng, c3, nc, 1)
            box.append((ConvUnit.random(rng, x, c2, 3), ConvUnit.random(rng, c2, c2, 3, groups=4),
                        ConvParams(fb.weight, box_bias)))
            cl.append((ConvUnit.random(rng, x, c3, 3), ConvUnit.random(rng, c3, c3, 3),
                       ConvParams(fc.weight, cls_bias)))
        return cls(tuple(box), tuple(cl), nc, reg_max)

    @property
    def in_channels(self):
        return [b[0].in_ch for b in self.box_stacks]

    @property
    def no(self):
        return 4 * self.reg_max + self.nc

    def forward(self, xs):
        return ddetect_forward(xs, self)

    def output_shape(self, shapes):
        if len(shapes) != len(self.box_stacks):
            raise DimensionError(f"DDetect expects {len(self.box_stacks)} feature maps, got {len(shapes)}")
        for i, (s, want) in enumerate(zip(shapes, self.in_channels)):
            if s[1] != want:
                raise DimensionError(f"DDetect level {i} expects {want} channels, got {s[1]}")
        return [(s[0], self.no, s[2], s[3]) for s in shapes]

    def fuse(self):
        def f(stack):
            return (stack[0].fuse(), stack[1].fuse(), stack[2])

        return DDetect(tuple(f(s) for s in self.box_stacks), tuple(f(s) for s in self.cls_stacks), self.nc, self.reg_max)

    def cost(self, shapes):
        costs = []
        for shape, stacks in zip(shapes, zip(self.box_stacks, self.cls_stacks)):
            for u1, u2, final in stacks:
                costs += [u1.cost(shape), u2.cost(u1.output_shape(shape))]
                costs.append(conv_cost(final, u2.output_shape(u1.output_shape(shape))))
        return total(costs)


def ddetect_forward(features, head):
    head.output_shape([f.shape for f in features])
    layers = []
    for x, (b1, b2, bf), (c1, c2, cf) in zip(features, head.box_stacks, head.cls_stacks):
        box = conv2d(b2.forward(b1.forward(x)), bf)
        cls = conv2d(c2.forward(c1.forward(x)), cf)
        layers.append(concat_channels([box, cls]))
    return RawPrediction(tuple(layers), head.reg_max, head.nc)


def _expected_distance(logits, axis):
    probs = softmax_last(np.asarray(logits, dtype=np.float64), axis=axis)
    bins = np.arange(probs.shape[axis], dtype=np.float64)
    shape = [1] * probs.ndim
    shape[axis] = -1
    return (probs * bins.reshape(shape)).sum(axis=axis)


def dfl_decode(dist_logits, anchor, stride):
    """Decode one point's ``4 * reg_max`` logits (left, top, right, bottom
    blocks) to a pixel box."""
    logits = np.asarray(dist_logits, dtype=np.float64).reshape(4, -1)
    if logits.shape[1] < 2:
        raise ValueError("reg_max must be at least 2")
    left, top, right, bottom = _expected_distance(logits, axis=1)
    ax, ay = anchor
    return ((ax - left) * stride, (ay - top) * stride, (ax + right) * stride, (ay + bottom) * stride)


def decode_boxes(raw, anchors):
    """Vectorized decode: ``(n, P, 4)`` pixel boxes and ``(n, P, nc)`` scores."""
    flat = raw.concatenated().astype(np.float64)
    n, _, p = flat.shape
    if p != len(anchors):
        raise DimensionError(f"raw prediction has {p} points, anchor grid has {len(anchors)}")
    r = raw.reg_max
    dist = _expected_distance(flat[:, :4 * r].reshape(n, 4, r, p), axis=2)  # n, 4, P
    lt, rb = dist[:, :2], dist[:, 2:]
    pts = anchors.points.T[None]  # 1, 2, P
    s = anchors.strides[None, None]
    boxes = np.concatenate([(pts - lt) * s, (pts + rb) * s], axis=1).transpose(0, 2, 1)
    logits = flat[:, 4 * r:]
    return boxes, sigmoid64(logits).transpose(0, 2, 1)


def decode_batch(raw, anchors, conf_thresh=DEFAULT_CONF):
    """Per-image detections (best class per point) with score >= ``conf_thresh``."""
    boxes, scores = decode_boxes(raw, anchors)
    out = []
    for bi in range(boxes.shape[0]):
        cls_id = scores[bi].argmax(axis=1)
        best = scores[bi][np.arange(scores.shape[1]), cls_id]
        keep = np.flatnonzero(best >= conf_thresh)
        dets = []
        for i in keep:
            x1, y1, x2, y2 = boxes[bi, i]
            s = float(best[i])
            if x2 > x1 and y2 > y1 and 0.0 < s < 1.0:
                dets.append(Detection((x1, y1, x2, y2), s, int(cls_id[i])))
        out.append(dets)
    return out


def decode_predictions(raw, anchors, conf_thresh=DEFAULT_CONF):
    """Detections for a single-image prediction."""
    if raw.batch != 1:
        raise DimensionError(f"decode_predictions handles one image, got a batch of {raw.batch}; use decode_batch")
    return decode_batch(raw, anchors, conf_thresh)[0]


def nms(dets, iou_thresh=DEFAULT_IOU):
    """Greedy per-class suppression, highest score first; equal scores keep
    input order."""
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets])
    classes = np.array([d.class_id for d in dets])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    order = np.argsort(-scores, kind="stable")
    suppressed = np.zeros(len(dets), dtype=bool)
    kept = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(dets[i])
        rest = order[pos + 1:]
        rest = rest[~suppressed[rest] & (classes[rest] == classes[i])]
        if rest.size == 0:
            continue
        iw = np.clip(np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0]), 0, None)
        ih = np.clip(np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1]), 0, None)
        inter = iw * ih
        iou = inter / (areas[i] + areas[rest] - inter)
        suppressed[rest[iou > iou_thresh]] = True
    return kept
