"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DimensionError

DTYPE = np.float32


def check_tensor4(x, name="x", channels=None, copy=False):
    """Return ``x`` as a contiguous float32 NCHW array.

    Parameters
    ----------
    x : array-like
        Candidate tensor. Must be rank 4 with every dimension >= 1.
    name : str
        Used in error messages.
    channels : int, optional
        If given, ``x.shape[1]`` must equal it.
    copy : bool
        Force a copy even when ``x`` is already float32 and contiguous.

    Raises
    ------
    DimensionError
        On wrong rank, empty dimension or channel mismatch.
    ValueError
        On non-finite values.
    """
    arr = np.array(x, dtype=DTYPE, copy=copy, order="C") if copy else np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise DimensionError(f"{name}: expected a rank-4 NCHW tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise DimensionError(f"{name}: every dimension must be >= 1, got {arr.shape}")
    if channels is not None and arr.shape[1] != channels:
        raise DimensionError(f"{name}: expected {channels} channels, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_box(box, name="box"):
    """Validate an ``(x1, y1, x2, y2)`` box and return it as a float tuple."""
    if len(box) != 4:
        raise ValueError(f"{name}: expected 4 coordinates, got {len(box)}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x2 > x1 and y2 > y1):
        raise ValueError(f"{name}: degenerate box {box!r} (need x2 > x1 and y2 > y1)")
    return x1, y1, x2, y2


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
