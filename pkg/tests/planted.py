"""The planted evaluation fixture: 4 images, 5 ground truths, 4 exact true
positives and 1 disjoint false positive.

Ranked by score the detections are T, T, T, F, T against 5 ground truths
(one object is never detected). Precision at each rank is 1, 1, 1, 3/4, 4/5;
the right-to-left envelope is 1, 1, 1, 4/5, 4/5, so all-point AP is
(1 + 1 + 1 + 4/5) / 5 = 19/25. Every true positive is pixel exact, so the
same value holds at every IoU threshold and AP50:95 is also 19/25.
"""

from fractions import Fraction

import numpy as np

from repgelan.data import write_pgm

SIZE = 64
EXPECTED_PRECISION = 0.8
EXPECTED_RECALL = 0.8
EXPECTED_AP50 = float(Fraction(19, 25))
EXPECTED_AP50_95 = float(Fraction(19, 25))

# per image: ground-truth label lines and prediction lines
LABELS = {
    "img0": ["0 0.25 0.25 0.25 0.25", "0 0.75 0.75 0.25 0.25"],
    "img1": ["0 0.5 0.5 0.5 0.5"],
    "img2": ["0 0.375 0.625 0.25 0.125"],
    "img3": ["0 0.5 0.25 0.5 0.25"],
}
PREDICTIONS = {
    "img0": ["0 0.9 8 8 24 24"],
    "img1": ["0 0.8 16 16 48 48", "0 0.6 0 52 10 62"],
    "img2": ["0 0.7 16 36 32 44"],
    "img3": ["0 0.5 16 8 48 24"],
}


def write_planted(root):
    """Write ``root/data/{images,labels}`` and ``root/pred``; returns both paths."""
    data, pred = root / "data", root / "pred"
    (data / "images").mkdir(parents=True)
    (data / "labels").mkdir()
    pred.mkdir()
    rng = np.random.default_rng(0)
    for stem in LABELS:
        write_pgm(data / "images" / f"{stem}.pgm", rng.integers(0, 256, (SIZE, SIZE)))
        (data / "labels" / f"{stem}.txt").write_text("\n".join(LABELS[stem]) + "\n")
        (pred / f"{stem}.txt").write_text("\n".join(PREDICTIONS[stem]) + "\n")
    return data, pred
