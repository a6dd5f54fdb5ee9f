"""RepVGG-GELAN object detector in NumPy.

Inference only: reparameterizable RepVGG/RCS blocks, GELAN aggregation
blocks, a decoupled anchor-free head, a config-driven model graph with
parameter/FLOP accounting, and a detection evaluator.
"""

__version__ = "0.1.0"

from .boxes import Detection, iou_xyxy
from .config import ModelConfig, bundled_config, load_config, parse_config
from .estimator import RepGelanDetector
from .evaluate import EvalReport, run_eval
from .exceptions import ConfigError, DimensionError, FormatError
from .graph import (
    AccountingReport,
    ModelGraph,
    build_graph,
    count_params_flops,
    fuse_graph,
    infer_shapes,
    model_forward,
)
from .metrics import average_precision, map_range, match_detections, pr_metrics
from .reparam import RepVGGBlockTrain, fuse_conv_bn, reparameterize

__all__ = [
    "AccountingReport", "ConfigError", "Detection", "DimensionError", "EvalReport", "FormatError",
    "ModelConfig", "ModelGraph", "RepGelanDetector", "RepVGGBlockTrain", "average_precision",
    "build_graph", "bundled_config", "count_params_flops", "fuse_conv_bn", "fuse_graph", "infer_shapes",
    "iou_xyxy", "load_config", "map_range", "match_detections", "model_forward", "parse_config",
    "pr_metrics", "reparameterize", "run_eval",
]
