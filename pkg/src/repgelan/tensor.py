"""Dense NCHW kernels: convolution, batch norm, activations, pooling and
channel plumbing.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)`` and
dtype float32. Window reductions accumulate in float64 and round once on
store, so every kernel is deterministic for a given input.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError
from .validation import DTYPE, check_tensor4

ACTIVATIONS = ("relu", "silu", "sigmoid", "identity")


@dataclass(frozen=True, eq=False)
class ConvParams:
    """Convolution weights.

    ``weight`` has shape ``(out_ch, in_ch // groups, kh, kw)``.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight, dtype=DTYPE)
        if w.ndim != 4:
            raise DimensionError(f"conv weight must be rank 4, got shape {w.shape}")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = np.ascontiguousarray(self.bias, dtype=DTYPE).reshape(-1)
            if b.shape[0] != w.shape[0]:
                raise DimensionError(f"conv bias has {b.shape[0]} entries for {w.shape[0]} output channels")
            object.__setattr__(self, "bias", b)
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.groups < 1 or w.shape[0] % self.groups:
            raise DimensionError(f"groups={self.groups} does not divide out_ch={w.shape[0]}")

    @property
    def out_ch(self):
        return self.weight.shape[0]

    @property
    def in_ch(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self):
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def n_params(self):
        return self.weight.size + (0 if self.bias is None else self.bias.size)


@dataclass(frozen=True, eq=False)
class BnParams:
    """Inference-time batch-norm statistics for ``C`` channels."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        arrays = {}
        for name in ("gamma", "beta", "running_mean", "running_var"):
            arrays[name] = np.ascontiguousarray(getattr(self, name), dtype=DTYPE).reshape(-1)
            object.__setattr__(self, name, arrays[name])
        sizes = {a.shape[0] for a in arrays.values()}
        if len(sizes) != 1:
            raise DimensionError(f"batch-norm vectors disagree in length: {sorted(sizes)}")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")
        if self.eps < 0 or np.any(self.running_var.astype(np.float64) + self.eps <= 0):
            raise ValueError("running_var + eps must be strictly positive")

    @property
    def channels(self):
        return self.gamma.shape[0]

    @property
    def n_params(self):
        # running statistics are buffers, not parameters
        return 2 * self.channels

    @classmethod
    def identity(cls, channels, eps=0.0):
        ones = np.ones(channels, dtype=DTYPE)
        zeros = np.zeros(channels, dtype=DTYPE)
        return cls(ones, zeros, zeros, ones, eps=eps)


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _windows(xp, kh, kw, stride):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, p):
    """Grouped 2-D cross-correlation of ``x`` with ``p``."""
    x = check_tensor4(x)
    n, c, h, w = x.shape
    if c != p.in_ch:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {p.in_ch}")
    kh, kw = p.kernel_size
    ho = conv_output_size(h, kh, p.stride, p.padding)
    wo = conv_output_size(w, kw, p.stride, p.padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    pad = p.padding
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, kw, p.stride)  # n, c, ho, wo, kh, kw
    g = p.groups
    cg, og = c // g, p.out_ch // g
    w64 = p.weight.astype(np.float64)
    out = np.empty((n, p.out_ch, ho, wo), dtype=np.float64)
    for gi in range(g):
        cols = win[:, gi * cg:(gi + 1) * cg].transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cg * kh * kw)
        wg = w64[gi * og:(gi + 1) * og].reshape(og, cg * kh * kw)
        out[:, gi * og:(gi + 1) * og] = (cols @ wg.T).reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
    if p.bias is not None:
        out += p.bias.astype(np.float64)[None, :, None, None]
    return out.astype(DTYPE)


def batchnorm_infer(x, b):
    """Apply frozen batch-norm statistics channel-wise."""
    x = check_tensor4(x)
    if x.shape[1] != b.channels:
        raise DimensionError(f"batchnorm: input has {x.shape[1]} channels, statistics have {b.channels}")
    scale = b.gamma.astype(np.float64) / np.sqrt(b.running_var.astype(np.float64) + b.eps)
    shift = b.beta.astype(np.float64) - b.running_mean.astype(np.float64) * scale
    y = x.astype(np.float64) * scale[None, :, None, None] + shift[None, :, None, None]
    return y.astype(DTYPE)


def activation(x, kind):
    x = np.asarray(x, dtype=DTYPE)
    if kind == "relu":
        return np.maximum(x, DTYPE(0))
    if kind == "sigmoid":
        return sigmoid64(x).astype(DTYPE)
    if kind == "silu":
        x64 = x.astype(np.float64)
        return (x64 * sigmoid64(x64)).astype(DTYPE)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def sigmoid64(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pool2d(x, mode, k, stride, pad=0):
    """Max or average pooling over ``k x k`` windows.

    Padded cells never win a max and are excluded from the average divisor.
    """
    x = check_tensor4(x)
    if k < 1 or stride < 1 or pad < 0:
        raise ValueError(f"invalid pooling geometry k={k} stride={stride} pad={pad}")
    n, c, h, w = x.shape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise DimensionError(f"pool2d: window {k} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    if mode == "max":
        xp = np.pad(x, widths, constant_values=-np.inf)
        return _windows(xp, k, k, stride).max(axis=(-2, -1)).astype(DTYPE)
    if mode == "avg":
        xp = np.pad(x.astype(np.float64), widths)
        sums = _windows(xp, k, k, stride).sum(axis=(-2, -1))
        valid = np.pad(np.ones((1, 1, h, w)), widths)
        counts = _windows(valid, k, k, stride).sum(axis=(-2, -1))
        return (sums / counts).astype(DTYPE)
    raise ValueError(f"unknown pooling mode {mode!r}")


def upsample_nearest(x, factor):
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor!r}")
    x = check_tensor4(x)
    factor = int(factor)
    if factor == 1:
        return x.copy()
    return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)


def concat_channels(xs: Sequence[np.ndarray]):
    xs = [check_tensor4(t, name=f"input {i}") for i, t in enumerate(xs)]
    if not xs:
        raise DimensionError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for i, t in enumerate(xs[1:], start=1):
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise DimensionError(f"concat_channels: input {i} has shape {t.shape}, expected (n, h, w) = {(n, h, w)}")
    return np.concatenate(xs, axis=1)


def split_channels(x, sizes: Sequence[int]):
    x = check_tensor4(x)
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes) or sum(sizes) != x.shape[1]:
        raise DimensionError(f"split_channels: sizes {sizes} do not partition {x.shape[1]} channels")
    bounds = np.cumsum([0] + sizes)
    return [x[:, bounds[i]:bounds[i + 1]].copy() for i in range(len(sizes))]


def softmax_last(x, axis=-1):
    """Numerically stable softmax along ``axis`` (the last one by default)."""
    arr = np.asarray(x)
    x64 = arr.astype(np.float64)
    x64 = x64 - x64.max(axis=axis, keepdims=True)
    e = np.exp(x64)
    out = e / e.sum(axis=axis, keepdims=True)
    return out.astype(arr.dtype if arr.dtype.kind == "f" else np.float64)
