"""Dataset-level evaluation producing the five-column detection report
(precision, recall, AP50, AP50:95, parameters) plus GFLOPs."""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from .boxes import parse_detections
from .data import image_size, load_image, parse_label_file
from .exceptions import FormatError
from .graph import model_forward
from .head import DEFAULT_CONF, DEFAULT_IOU
from .metrics import MatchResult, dataset_ap, dataset_map_range, match_detections, pr_metrics

log = logging.getLogger(__name__)

MATCH_IOU = 0.5


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    ap50: float
    ap50_95: float
    params_millions: float = None
    gflops: float = None
    n_images: int = 0
    n_skipped: int = 0
    n_ground_truths: int = 0
    n_detections: int = 0
    empty: bool = False

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def table(self, name="RepVGG-GELAN"):
        def fmt(v, spec):
            return "-" if v is None else format(v, spec)

        cols = ["Precision", "Recall", "AP50", "AP50:95", "Parameters (M)", "GFLOPs"]
        vals = [fmt(self.precision, ".3f"), fmt(self.recall, ".3f"), fmt(self.ap50, ".3f"),
                fmt(self.ap50_95, ".3f"), fmt(self.params_millions, ".1f"), fmt(self.gflops, ".1f")]
        widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
        label = max(len(name), 5)
        head = " | ".join(c.rjust(w) for c, w in zip(cols, widths))
        row = " | ".join(v.rjust(w) for v, w in zip(vals, widths))
        rule = "-" * (label + 3 + len(head))
        lines = [rule, f"{'':<{label}} | {head}", rule, f"{name:<{label}} | {row}", rule]
        if self.empty:
            lines.append("note: empty evaluation set, metrics reported as 0")
        if self.n_skipped:
            lines.append(f"note: {self.n_skipped} image(s) skipped for missing labels")
        return "\n".join(lines)


def collect_samples(data_dir, graph=None, pred_dir=None, conf_thresh=DEFAULT_CONF, iou_nms=DEFAULT_IOU):
    """Per-image ``(detections, ground truths)`` pairs plus the skip count.

    Detections come from ``pred_dir/<stem>.txt`` when given, else from running
    ``graph`` on each image.
    """
    root = Path(data_dir)
    images = sorted((root / "images").glob("*.pgm"))
    samples, skipped = [], 0
    for path in images:
        label = root / "labels" / f"{path.stem}.txt"
        if not label.exists():
            log.warning("no label file for %s; skipping", path.name)
            skipped += 1
            continue
        try:
            if pred_dir is None:
                image = load_image(path.read_bytes())
                h, w = image.shape[2:]
            else:
                w, h = image_size(path)
        except (OSError, FormatError) as exc:
            raise FormatError(f"{path}: unreadable image ({exc})") from exc
        try:
            gts = parse_label_file(label.read_text(), w, h)
        except FormatError as exc:
            raise FormatError(f"{label}: {exc}") from exc
        if pred_dir is not None:
            pred = Path(pred_dir) / f"{path.stem}.txt"
            try:
                dets = parse_detections(pred.read_text()) if pred.exists() else []
            except FormatError as exc:
                raise FormatError(f"{pred}: {exc}") from exc
        elif graph is not None:
            dets = model_forward(graph, image, conf_thresh, iou_nms)
        else:
            raise ValueError("either a model graph or a prediction directory is required")
        samples.append((dets, gts))
    return samples, len(images), skipped


def evaluate_samples(samples, conf_thresh=DEFAULT_CONF, accounting=None, n_images=None, n_skipped=0):
    """Aggregate metrics over ``[(dets, gts), ...]``.

    Precision and recall use detections scoring at least ``conf_thresh``,
    matched at IoU 0.5; the AP figures rank every detection.
    """
    tp = fp = fn = 0
    for dets, gts in samples:
        m = match_detections([d for d in dets if d.score >= conf_thresh], gts, MATCH_IOU)
        tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
    pr = pr_metrics(MatchResult(tp, fp, fn))
    n_gt = sum(len(g) for _, g in samples)
    return EvalReport(
        precision=pr.precision,
        recall=pr.recall,
        ap50=dataset_ap(samples, MATCH_IOU),
        ap50_95=dataset_map_range(samples),
        params_millions=None if accounting is None else accounting.total_params / 1e6,
        gflops=None if accounting is None else accounting.total_gflops,
        n_images=len(samples) + n_skipped if n_images is None else n_images,
        n_skipped=n_skipped,
        n_ground_truths=n_gt,
        n_detections=sum(len(d) for d, _ in samples),
        empty=pr.empty or n_gt == 0,
    )


def run_eval(data_dir, graph=None, pred_dir=None, conf_thresh=DEFAULT_CONF, iou_nms=DEFAULT_IOU, accounting=None):
    """Evaluate a model graph, or a directory of prediction files, on ``data_dir``
    (which holds ``images/`` and ``labels/``)."""
    samples, n_images, skipped = collect_samples(data_dir, graph, pred_dir, conf_thresh, iou_nms)
    return evaluate_samples(samples, conf_thresh, accounting, n_images, skipped)
