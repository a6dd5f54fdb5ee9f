"""scikit-learn compatible wrappers.

:class:`RepGelanDetector` follows the estimator protocol (``get_params`` /
``set_params``, ``fit`` returning ``self``, fitted attributes ending in
``_``), so it can sit in pipelines and be cloned. There is no training:
``fit`` builds the graph from the configuration, initializes or loads the
weights and optionally fuses it.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import parse_config, resolve_config
from .graph import build_graph, count_params_flops, fuse_graph
from .head import DEFAULT_CONF, DEFAULT_IOU
from .metrics import dataset_ap, dataset_map_range
from .validation import check_tensor4
from .weights import load_weights


def _as_batch(X, channels):
    if isinstance(X, (list, tuple)):
        return [check_tensor4(x, name="image", channels=channels) for x in X]
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[:, None]
    return [check_tensor4(X[i:i + 1], name="image", channels=channels) for i in range(X.shape[0])]


class RepGelanDetector(BaseEstimator):
    """Detector estimator.

    Parameters
    ----------
    config : str, optional
        Config text, a path to a config file, or the name of a bundled
        config (``"reference.cfg"``, ``"toy.cfg"``). Defaults to the
        reference model.
    input_size : int
        Square input size used for shape inference and accounting.
    conf_thresh, iou_thresh : float
        Score threshold and NMS IoU threshold applied by ``predict``.
    fuse : bool
        Fold BN and reparameterize RepVGG blocks after building.
    weights : str, optional
        Path to an ``RGW1`` weights file; random weights otherwise.
    random_state : int
        Seed for random weights.

    Attributes
    ----------
    graph_ : ModelGraph
    n_params_ : int
    gflops_ : float
    strides_ : list of int
    """

    def __init__(self, config=None, input_size=640, conf_thresh=DEFAULT_CONF, iou_thresh=DEFAULT_IOU,
                 fuse=True, weights=None, random_state=0):
        self.config = config
        self.input_size = input_size
        self.conf_thresh = conf_thresh
        self.iou_thresh = iou_thresh
        self.fuse = fuse
        self.weights = weights
        self.random_state = random_state

    def fit(self, X=None, y=None):
        """Build the graph. ``X`` and ``y`` are accepted for API compatibility
        and ignored."""
        cfg = parse_config(resolve_config(self.config))
        g = build_graph(cfg, self.input_size, seed=self.random_state)
        if self.weights is not None:
            g = load_weights(g, self.weights)
        if self.fuse:
            g = fuse_graph(g)
        report = count_params_flops(g, self.input_size)
        self.graph_ = g
        self.n_params_ = report.total_params
        self.gflops_ = report.total_gflops
        self.strides_ = g.strides
        return self

    def predict(self, X):
        """Detections per image.

        ``X`` is an ``(n, ch, h, w)`` array, an ``(n, h, w)`` array for
        single-channel input, or a list of ``(1, ch, h, w)`` arrays.
        """
        check_is_fitted(self, "graph_")
        out = []
        for image in _as_batch(X, self.graph_.ch):
            out.extend(self.graph_.predict_batch(image, self.conf_thresh, self.iou_thresh))
        return out

    def score(self, X, y):
        """AP50 against ``y``, a list of per-image ``(class_id, x1, y1, x2, y2)`` lists."""
        return dataset_ap(list(zip(self.predict(X), y)), 0.5)

    def score_range(self, X, y):
        """AP averaged over IoU thresholds 0.5:0.95."""
        return dataset_map_range(list(zip(self.predict(X), y)))

