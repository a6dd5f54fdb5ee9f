"""RepVGG blocks in train and deploy form, the conv/BN fusion algebra that
links them, and the channel-split/shuffle (RCS) wrapper.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import Cost, act_cost, bn_cost, conv_cost, conv_shape
from .exceptions import DimensionError
from .init import as_rng, random_bn, random_conv
from .tensor import (
    BnParams,
    ConvParams,
    activation,
    batchnorm_infer,
    concat_channels,
    conv2d,
    split_channels,
)
from .validation import DTYPE, check_tensor4


def _fold_bn(weight, bias, bn):
    """Float64 conv+BN fold; returns ``(weight, bias)`` without rounding."""
    std = np.sqrt(bn.running_var.astype(np.float64) + bn.eps)
    t = bn.gamma.astype(np.float64) / std
    w = weight.astype(np.float64) * t[:, None, None, None]
    b0 = np.zeros(weight.shape[0]) if bias is None else bias.astype(np.float64)
    b = bn.beta.astype(np.float64) + (b0 - bn.running_mean.astype(np.float64)) * t
    return w, b


def fuse_conv_bn(conv, bn):
    """Fold inference batch norm into the preceding convolution.

    The result satisfies ``conv2d(x, fused) == batchnorm_infer(conv2d(x, conv), bn)``
    up to rounding.
    """
    if bn.channels != conv.out_ch:
        raise DimensionError(f"fuse_conv_bn: BN has {bn.channels} channels, conv has {conv.out_ch} outputs")
    w, b = _fold_bn(conv.weight, conv.bias, bn)
    return ConvParams(w.astype(DTYPE), b.astype(DTYPE), conv.stride, conv.padding, conv.groups)


def pad_1x1_to_3x3(w):
    w = np.asarray(w)
    if w.ndim != 4 or w.shape[2:] != (1, 1):
        raise ValueError(f"pad_1x1_to_3x3 expects a (o, i, 1, 1) kernel, got shape {w.shape}")
    return np.pad(w, ((0, 0), (0, 0), (1, 1), (1, 1)))


def identity_as_3x3(channels, groups=1):
    """3x3 kernel whose stride-1, pad-1 convolution returns its input."""
    if groups < 1 or channels % groups:
        raise ValueError(f"groups={groups} does not divide channels={channels}")
    per_group = channels // groups
    k = np.zeros((channels, per_group, 3, 3), dtype=DTYPE)
    k[np.arange(channels), np.arange(channels) % per_group, 1, 1] = 1.0
    return k


@dataclass(frozen=True, eq=False)
class RepVGGBlockTrain:
    """Three parallel branches: 3x3 conv+BN, 1x1 conv+BN and an optional
    identity BN, summed before the activation."""

    conv3: ConvParams
    bn3: BnParams
    conv1: ConvParams
    bn1: BnParams
    bn_id: Optional[BnParams] = None
    act: str = "relu"

    def __post_init__(self):
        c3, c1 = self.conv3, self.conv1
        if c3.kernel_size != (3, 3) or c3.padding != 1 or c3.bias is not None:
            raise ValueError("3x3 branch must be a bias-free 3x3 conv with padding 1")
        if c1.kernel_size != (1, 1) or c1.padding != 0 or c1.bias is not None:
            raise ValueError("1x1 branch must be a bias-free 1x1 conv with padding 0")
        if (c3.stride, c3.groups, c3.in_ch, c3.out_ch) != (c1.stride, c1.groups, c1.in_ch, c1.out_ch):
            raise DimensionError("3x3 and 1x1 branches disagree on stride, groups or channels")
        if self.bn3.channels != c3.out_ch or self.bn1.channels != c1.out_ch:
            raise DimensionError("branch BN width does not match the conv output width")
        if self.bn_id is not None:
            if c3.in_ch != c3.out_ch or c3.stride != 1:
                raise ValueError("identity branch requires in_ch == out_ch and stride 1")
            if self.bn_id.channels != c3.out_ch:
                raise DimensionError("identity BN width does not match the block width")

    @classmethod
    def random(cls, seed, c1, c2, stride=1, groups=1, identity=None, act="relu"):
        rng = as_rng(seed)
        if identity is None:
            identity = c1 == c2 and stride == 1
        return cls(
            conv3=random_conv(rng, c1, c2, 3, stride, 1, groups),
            bn3=random_bn(rng, c2),
            conv1=random_conv(rng, c1, c2, 1, stride, 0, groups),
            bn1=random_bn(rng, c2),
            bn_id=random_bn(rng, c2) if identity else None,
            act=act,
        )

    in_ch = property(lambda self: self.conv3.in_ch)
    out_ch = property(lambda self: self.conv3.out_ch)
    stride = property(lambda self: self.conv3.stride)
    groups = property(lambda self: self.conv3.groups)

    def forward(self, x):
        return repvgg_forward(self, x)

    def output_shape(self, shape):
        return conv_shape(self.conv3, shape)

    def fuse(self):
        return reparameterize(self)

    def cost(self, shape):
        out = self.output_shape(shape)
        c = conv_cost(self.conv3, shape) + bn_cost(self.bn3, out)
        c = c + conv_cost(self.conv1, shape) + bn_cost(self.bn1, out)
        if self.bn_id is not None:
            c = c + bn_cost(self.bn_id, out)
        return c + act_cost(self.act, out)


@dataclass(frozen=True, eq=False)
class RepVGGBlockDeploy:
    """A single biased 3x3 convolution followed by the activation."""

    fused: ConvParams
    act: str = "relu"

    def __post_init__(self):
        if self.fused.kernel_size != (3, 3) or self.fused.bias is None:
            raise ValueError("deploy form needs a biased 3x3 kernel")

    in_ch = property(lambda self: self.fused.in_ch)
    out_ch = property(lambda self: self.fused.out_ch)
    stride = property(lambda self: self.fused.stride)
    groups = property(lambda self: self.fused.groups)

    def forward(self, x):
        return repvgg_forward(self, x)

    def output_shape(self, shape):
        return conv_shape(self.fused, shape)

    def fuse(self):
        return self

    def cost(self, shape):
        return conv_cost(self.fused, shape) + act_cost(self.act, self.output_shape(shape))


def reparameterize(b):
    """Collapse a train-form block into its equivalent single 3x3 conv."""
    if isinstance(b, RepVGGBlockDeploy):
        return b
    w, bias = _fold_bn(b.conv3.weight, None, b.bn3)
    w1, b1 = _fold_bn(b.conv1.weight, None, b.bn1)
    w = w + pad_1x1_to_3x3(w1)
    bias = bias + b1
    if b.bn_id is not None:
        wid, bid = _fold_bn(identity_as_3x3(b.in_ch, b.groups), None, b.bn_id)
        w = w + wid
        bias = bias + bid
    fused = ConvParams(w.astype(DTYPE), bias.astype(DTYPE), stride=b.stride, padding=1, groups=b.groups)
    return RepVGGBlockDeploy(fused, act=b.act)


def repvgg_forward(b, x):
    x = check_tensor4(x)
    if x.shape[1] != b.in_ch:
        raise DimensionError(f"RepVGG block expects {b.in_ch} channels, got {x.shape[1]}")
    if isinstance(b, RepVGGBlockDeploy):
        return activation(conv2d(x, b.fused), b.act)
    y = batchnorm_infer(conv2d(x, b.conv3), b.bn3).astype(np.float64)
    y += batchnorm_infer(conv2d(x, b.conv1), b.bn1)
    if b.bn_id is not None:
        y += batchnorm_infer(x, b.bn_id)
    return activation(y.astype(DTYPE), b.act)


def channel_shuffle(x, g):
    """Reshape channels to ``(g, c/g)``, transpose, flatten."""
    x = check_tensor4(x)
    n, c, h, w = x.shape
    if g < 1 or c % g:
        raise ValueError(f"channel_shuffle: groups={g} does not divide {c} channels")
    return np.ascontiguousarray(x.reshape(n, g, c // g, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w))


@dataclass(frozen=True, eq=False)
class RcsBlock:
    """Split channels in two, run each half through a RepVGG block, concat,
    shuffle.

    With ``identity_half`` the second half is passed through untouched
    (``halves[1]`` is then ``None``).
    """

    halves: tuple
    shuffle_groups: int = 2
    identity_half: bool = False

    def __post_init__(self):
        a, b = self.halves
        if self.identity_half:
            if b is not None:
                raise ValueError("identity_half RCS block takes no second RepVGG block")
            if a.stride != 1:
                raise ValueError("identity_half RCS block must have stride 1")
        elif b is None:
            raise ValueError("RCS block needs two RepVGG blocks")
        elif (a.in_ch, a.stride) != (b.in_ch, b.stride):
            raise DimensionError("RCS halves disagree on width or stride")

    @classmethod
    def random(cls, seed, c1, c2, stride=1, identity_half=False, act="relu"):
        if c1 % 2 or c2 % 2:
            raise DimensionError(f"RCS block needs even channel counts, got {c1} -> {c2}")
        rng = as_rng(seed)
        a = RepVGGBlockTrain.random(rng, c1 // 2, c2 // 2, stride, act=act)
        if identity_half:
            if c1 != c2:
                raise DimensionError("identity_half RCS block must preserve width")
            return cls((a, None), identity_half=True)
        b = RepVGGBlockTrain.random(rng, c1 // 2, c2 // 2, stride, act=act)
        return cls((a, b))

    @property
    def in_ch(self):
        return 2 * self.halves[0].in_ch

    @property
    def out_ch(self):
        a, b = self.halves
        return a.out_ch + (a.in_ch if b is None else b.out_ch)

    def forward(self, x):
        return rcs_forward(self, x)

    def output_shape(self, shape):
        n, _, h, w = self.halves[0].output_shape(shape)
        return n, self.out_ch, h, w

    def fuse(self):
        a, b = self.halves
        return RcsBlock(
            (reparameterize(a), None if b is None else reparameterize(b)),
            self.shuffle_groups,
            self.identity_half,
        )

    def cost(self, shape):
        n, c, h, w = shape
        half = (n, c // 2, h, w)
        a, b = self.halves
        return a.cost(half) + (Cost() if b is None else b.cost(half))


def rcs_forward(b, x):
    x = check_tensor4(x)
    c = x.shape[1]
    if c % 2:
        raise DimensionError(f"RCS block needs an even channel count, got {c}")
    if c != b.in_ch:
        raise DimensionError(f"RCS block expects {b.in_ch} channels, got {c}")
    left, right = split_channels(x, [c // 2, c // 2])
    first, second = b.halves
    y = concat_channels([first.forward(left), right if second is None else second.forward(right)])
    return channel_shuffle(y, b.shuffle_groups)
