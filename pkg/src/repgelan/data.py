"""Dataset I/O: binary PGM images and normalized ``cls cx cy w h`` labels."""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .validation import DTYPE

SLACK = 1e-6


@dataclass(frozen=True)
class GroundTruthBox:
    """Normalized center-format box as stored in label files."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class id must be >= 0, got {self.class_id}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got {self.w}, {self.h}")
        for lo, hi in ((self.cx - self.w / 2, self.cx + self.w / 2), (self.cy - self.h / 2, self.cy + self.h / 2)):
            if lo < -SLACK or hi > 1 + SLACK:
                raise ValueError(f"box extends outside the unit square: {self}")

    def to_pixels(self, img_w, img_h):
        return (
            (self.cx - self.w / 2) * img_w,
            (self.cy - self.h / 2) * img_h,
            (self.cx + self.w / 2) * img_w,
            (self.cy + self.h / 2) * img_h,
        )


def parse_label_file(text, img_w, img_h):
    """Denormalize label lines into ``(class_id, x1, y1, x2, y2)`` pixel tuples."""
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image dims must be positive, got {img_w}x{img_h}")
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise FormatError(f"expected 'class cx cy w h', got {line.strip()!r}", lineno)
        try:
            cls = int(tokens[0])
            cx, cy, w, h = (float(t) for t in tokens[1:])
        except ValueError as exc:
            raise FormatError(f"non-numeric token in {line.strip()!r}", lineno) from exc
        if cls < 0:
            raise FormatError(f"negative class id {cls}", lineno)
        if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
            raise FormatError(f"coordinate outside [0, 1] in {line.strip()!r}", lineno)
        try:
            gt = GroundTruthBox(cls, cx, cy, w, h)
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from exc
        out.append((cls, *gt.to_pixels(img_w, img_h)))
    return out


_PGM_HEADER = re.compile(rb"\AP5(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def read_pgm_header(data):
    """``(width, height, maxval, payload offset)`` of a binary PGM."""
    if data[:2] != b"P5":
        raise FormatError(f"unsupported image magic {data[:2]!r}; only binary PGM (P5) is read")
    m = _PGM_HEADER.match(data)
    if not m:
        raise FormatError("malformed PGM header")
    w, h, maxval = (int(v) for v in m.groups())
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM geometry {w}x{h} maxval {maxval}")
    return w, h, maxval, m.end()


def load_image(data):
    """Decode binary PGM bytes into a ``1 x 1 x h x w`` float32 tensor in [0, 1]."""
    w, h, maxval, offset = read_pgm_header(data)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(data) - offset < need:
        raise FormatError(f"truncated PGM payload: {len(data) - offset} bytes, need {need}")
    pixels = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset).astype(np.float64)
    return (pixels / maxval).reshape(1, 1, h, w).astype(DTYPE)


def write_pgm(path, pixels, maxval=255):
    """Write a 2-D integer array as binary PGM."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    dtype = ">u2" if maxval > 255 else "u1"
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + pixels.astype(dtype).tobytes())


def image_size(path):
    with open(path, "rb") as fh:
        head = fh.read(512)
    w, h, _, _ = read_pgm_header(head)
    return w, h
