"""Detections, IoU and the text line format shared by the CLI and evaluator."""

from dataclasses import dataclass

from .exceptions import FormatError
from .validation import check_box


@dataclass(frozen=True)
class Detection:
    """A predicted box ``(x1, y1, x2, y2)`` in pixels with its score and class."""

    box: tuple
    score: float
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "box", check_box(self.box))
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "class_id", int(self.class_id))
        if not 0.0 < self.score < 1.0:
            raise ValueError(f"detection score must lie in (0, 1), got {self.score}")

    def to_line(self):
        x1, y1, x2, y2 = self.box
        return f"{self.class_id} {self.score:.6g} {x1:.6g} {y1:.6g} {x2:.6g} {y2:.6g}"

    @classmethod
    def from_line(cls, line, lineno=None):
        tokens = line.split()
        if len(tokens) != 6:
            raise FormatError(f"expected 'class_id score x1 y1 x2 y2', got {line.strip()!r}", lineno)
        try:
            cls_id = int(tokens[0])
            score, x1, y1, x2, y2 = (float(t) for t in tokens[1:])
        except ValueError as exc:
            raise FormatError(f"non-numeric token in {line.strip()!r}", lineno) from exc
        try:
            return cls((x1, y1, x2, y2), score, cls_id)
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from exc


def format_detections(dets):
    return "".join(d.to_line() + "\n" for d in dets)


def parse_detections(text):
    return [Detection.from_line(line, i) for i, line in enumerate(text.splitlines(), start=1) if line.strip()]


def box_area(box):
    return (box[2] - box[0]) * (box[3] - box[1])


def iou_xyxy(a, b):
    """Intersection over union of two corner-format boxes."""
    ax1, ay1, ax2, ay2 = check_box(a, "a")
    bx1, by1, bx2, by2 = check_box(b, "b")
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return min(1.0, max(0.0, inter / union))
