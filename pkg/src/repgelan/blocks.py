"""GELAN building blocks: conv units, RepNCSP, RepNCSPELAN4, ADown, SPPELAN
and the upsample/concat merge.

Every block is an immutable dataclass exposing the same small surface:
``forward(x)``, ``output_shape(shape)``, ``cost(shape)`` (per image) and
``fuse()`` (returns a new block with all BN folded away).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import Cost, act_cost, bn_cost, conv_cost, conv_shape, total
from .exceptions import DimensionError
from .init import as_rng, random_bn, random_conv
from .reparam import RcsBlock, RepVGGBlockTrain, fuse_conv_bn
from .tensor import (
    BnParams,
    ConvParams,
    activation,
    batchnorm_infer,
    concat_channels,
    conv2d,
    pool2d,
    split_channels,
    upsample_nearest,
)
from .validation import DTYPE, check_tensor4

SPP_POOL_K = 5


@dataclass(frozen=True, eq=False)
class ConvUnit:
    """Conv -> BN -> activation. After ``fuse()`` the BN is gone and the
    conv carries a bias."""

    conv: ConvParams
    bn: Optional[BnParams] = None
    act: str = "silu"

    def __post_init__(self):
        if self.bn is not None and self.bn.channels != self.conv.out_ch:
            raise DimensionError(f"ConvUnit BN width {self.bn.channels} != conv out_ch {self.conv.out_ch}")

    @classmethod
    def random(cls, seed, c1, c2, k=1, stride=1, groups=1, act="silu"):
        rng = as_rng(seed)
        return cls(random_conv(rng, c1, c2, k, stride, k // 2, groups), random_bn(rng, c2), act)

    in_ch = property(lambda self: self.conv.in_ch)
    out_ch = property(lambda self: self.conv.out_ch)

    def forward(self, x):
        y = conv2d(x, self.conv)
        if self.bn is not None:
            y = batchnorm_infer(y, self.bn)
        return activation(y, self.act)

    def output_shape(self, shape):
        return conv_shape(self.conv, shape)

    def fuse(self):
        if self.bn is None:
            return self
        return ConvUnit(fuse_conv_bn(self.conv, self.bn), None, self.act)

    def cost(self, shape):
        out = self.output_shape(shape)
        c = conv_cost(self.conv, shape) + act_cost(self.act, out)
        if self.bn is not None:
            c = c + bn_cost(self.bn, out)
        return c


@dataclass(frozen=True, eq=False)
class Sequential:
    """Blocks applied one after another (used for config ``repeats``)."""

    blocks: tuple

    in_ch = property(lambda self: self.blocks[0].in_ch)
    out_ch = property(lambda self: self.blocks[-1].out_ch)

    def forward(self, x):
        for b in self.blocks:
            x = b.forward(x)
        return x

    def output_shape(self, shape):
        for b in self.blocks:
            shape = b.output_shape(shape)
        return shape

    def fuse(self):
        return Sequential(tuple(b.fuse() for b in self.blocks))

    def cost(self, shape):
        costs = []
        for b in self.blocks:
            costs.append(b.cost(shape))
            shape = b.output_shape(shape)
        return total(costs)


def _add(a, b):
    return (a.astype(np.float64) + b).astype(DTYPE)


@dataclass(frozen=True, eq=False)
class RepNBottleneck:
    """RepVGG (or RCS) 3x3 stage, then a 3x3 conv unit, plus a residual."""

    rep: object
    conv: ConvUnit
    shortcut: bool = True

    @classmethod
    def random(cls, seed, c, rcs=False):
        rng = as_rng(seed)
        rep = RcsBlock.random(rng, c, c) if rcs else RepVGGBlockTrain.random(rng, c, c)
        return cls(rep, ConvUnit.random(rng, c, c, 3))

    in_ch = property(lambda self: self.rep.in_ch)
    out_ch = property(lambda self: self.conv.out_ch)

    def forward(self, x):
        y = self.conv.forward(self.rep.forward(x))
        return _add(x, y) if self.shortcut else y

    def output_shape(self, shape):
        return self.conv.output_shape(self.rep.output_shape(shape))

    def fuse(self):
        return RepNBottleneck(self.rep.fuse(), self.conv.fuse(), self.shortcut)

    def cost(self, shape):
        return self.rep.cost(shape) + self.conv.cost(self.rep.output_shape(shape))


@dataclass(frozen=True, eq=False)
class RepNcspBlock:
    """CSP block: a bottleneck path and a 1x1 shortcut path, concatenated and
    projected by a 1x1 exit conv."""

    cv1: ConvUnit
    cv2: ConvUnit
    cv3: ConvUnit
    bottlenecks: tuple = ()

    def __post_init__(self):
        if self.cv3.in_ch != self.cv1.out_ch + self.cv2.out_ch:
            raise DimensionError("RepNCSP exit conv width does not match the two path widths")

    @classmethod
    def random(cls, seed, c1, c2, n=1, rcs=False):
        rng = as_rng(seed)
        hidden = c2 // 2
        if hidden < 1 or (rcs and hidden % 2):
            raise DimensionError(f"RepNCSP hidden width {hidden} unusable (c2={c2}, rcs={rcs})")
        return cls(
            cv1=ConvUnit.random(rng, c1, hidden, 1),
            cv2=ConvUnit.random(rng, c1, hidden, 1),
            cv3=ConvUnit.random(rng, 2 * hidden, c2, 1),
            bottlenecks=tuple(RepNBottleneck.random(rng, hidden, rcs) for _ in range(n)),
        )

    in_ch = property(lambda self: self.cv1.in_ch)
    out_ch = property(lambda self: self.cv3.out_ch)

    def forward(self, x):
        return repncsp_forward(self, x)

    def output_shape(self, shape):
        n, _, h, w = shape
        return n, self.out_ch, h, w

    def fuse(self):
        return RepNcspBlock(self.cv1.fuse(), self.cv2.fuse(), self.cv3.fuse(), tuple(b.fuse() for b in self.bottlenecks))

    def cost(self, shape):
        n, _, h, w = shape
        hidden = (n, self.cv1.out_ch, h, w)
        costs = [self.cv1.cost(shape), self.cv2.cost(shape), self.cv3.cost((n, self.cv3.in_ch, h, w))]
        costs += [b.cost(hidden) for b in self.bottlenecks]
        return total(costs)


def repncsp_forward(b, x):
    x = check_tensor4(x)
    if x.shape[1] != b.in_ch:
        raise DimensionError(f"RepNCSP expects {b.in_ch} channels, got {x.shape[1]}")
    y = b.cv1.forward(x)
    for m in b.bottlenecks:
        y = m.forward(y)
    return b.cv3.forward(concat_channels([y, b.cv2.forward(x)]))


@dataclass(frozen=True, eq=False)
class RepNcspElan4:
    """Entry 1x1 conv, split in two, two sequential (RepNCSP + 3x3 conv)
    stages each appending one more part, 4-way concat, exit 1x1 conv."""

    cv1: ConvUnit
    stage1: tuple  # (RepNcspBlock, ConvUnit)
    stage2: tuple
    cv4: ConvUnit

    def __post_init__(self):
        if self.cv1.out_ch % 2:
            raise DimensionError(f"RepNCSPELAN4 entry width must be even, got {self.cv1.out_ch}")
        parts = self.cv1.out_ch + self.stage1[1].out_ch + self.stage2[1].out_ch
        if self.cv4.in_ch != parts:
            raise DimensionError(f"RepNCSPELAN4 exit conv expects {self.cv4.in_ch} channels, parts give {parts}")

    @classmethod
    def random(cls, seed, c1, c2, c3, c4, n=1, rcs=False):
        if c3 % 2:
            raise DimensionError(f"RepNCSPELAN4 entry width must be even, got {c3}")
        rng = as_rng(seed)
        return cls(
            cv1=ConvUnit.random(rng, c1, c3, 1),
            stage1=(RepNcspBlock.random(rng, c3 // 2, c4, n, rcs), ConvUnit.random(rng, c4, c4, 3)),
            stage2=(RepNcspBlock.random(rng, c4, c4, n, rcs), ConvUnit.random(rng, c4, c4, 3)),
            cv4=ConvUnit.random(rng, c3 + 2 * c4, c2, 1),
        )

    in_ch = property(lambda self: self.cv1.in_ch)
    out_ch = property(lambda self: self.cv4.out_ch)

    def forward(self, x):
        return repncspelan4_forward(self, x)

    def output_shape(self, shape):
        n, _, h, w = shape
        return n, self.out_ch, h, w

    def fuse(self):
        return RepNcspElan4(
            self.cv1.fuse(),
            tuple(m.fuse() for m in self.stage1),
            tuple(m.fuse() for m in self.stage2),
            self.cv4.fuse(),
        )

    def cost(self, shape):
        n, _, h, w = shape
        c3 = self.cv1.out_ch
        c4 = self.stage1[1].out_ch
        return total([
            self.cv1.cost(shape),
            self.stage1[0].cost((n, c3 // 2, h, w)),
            self.stage1[1].cost((n, c4, h, w)),
            self.stage2[0].cost((n, c4, h, w)),
            self.stage2[1].cost((n, c4, h, w)),
            self.cv4.cost((n, self.cv4.in_ch, h, w)),
        ])


def repncspelan4_forward(b, x):
    x = check_tensor4(x)
    if x.shape[1] != b.in_ch:
        raise DimensionError(f"RepNCSPELAN4 expects {b.in_ch} channels, got {x.shape[1]}")
    y = b.cv1.forward(x)
    half = y.shape[1] // 2
    parts = split_channels(y, [half, half])
    for csp, conv in (b.stage1, b.stage2):
        parts.append(conv.forward(csp.forward(parts[-1])))
    return b.cv4.forward(concat_channels(parts))


@dataclass(frozen=True, eq=False)
class ADownBlock:
    """Asymmetric 2x downsampling.

    Channels are split in half. Half A: avg pool (k=2, s=1) then a 3x3
    stride-2 conv. Half B: max pool (k=3, s=2, pad=1) then a 1x1 conv.
    """

    conv_a: ConvUnit
    conv_b: ConvUnit

    def __post_init__(self):
        if self.conv_a.in_ch != self.conv_b.in_ch:
            raise DimensionError("ADown branches must see equal halves")
        if self.conv_a.conv.stride != 2 or self.conv_a.conv.kernel_size != (3, 3) or self.conv_a.conv.padding != 1:
            raise ValueError("ADown conv_a must be 3x3, stride 2, pad 1")
        if self.conv_b.conv.kernel_size != (1, 1) or self.conv_b.conv.stride != 1:
            raise ValueError("ADown conv_b must be 1x1, stride 1")

    @classmethod
    def random(cls, seed, c1, c2):
        if c1 % 2 or c2 % 2:
            raise DimensionError(f"ADown needs even channel counts, got {c1} -> {c2}")
        rng = as_rng(seed)
        return cls(ConvUnit.random(rng, c1 // 2, c2 // 2, 3, 2), ConvUnit.random(rng, c1 // 2, c2 // 2, 1))

    in_ch = property(lambda self: 2 * self.conv_a.in_ch)
    out_ch = property(lambda self: self.conv_a.out_ch + self.conv_b.out_ch)

    def forward(self, x):
        return adown_forward(self, x)

    def output_shape(self, shape):
        n, c, h, w = shape
        self._check_shape(c, h, w)
        return n, self.out_ch, h // 2, w // 2

    def _check_shape(self, c, h, w):
        if c != self.in_ch:
            raise DimensionError(f"ADown expects {self.in_ch} channels, got {c}")
        if h % 2 or w % 2:
            raise DimensionError(f"ADown needs even spatial dims, got {h}x{w}")

    def fuse(self):
        return ADownBlock(self.conv_a.fuse(), self.conv_b.fuse())

    def cost(self, shape):
        n, c, h, w = shape
        half = c // 2
        return self.conv_a.cost((n, half, h - 1, w - 1)) + self.conv_b.cost((n, half, h // 2, w // 2))


def adown_forward(b, x):
    x = check_tensor4(x)
    n, c, h, w = x.shape
    if c % 2:
        raise DimensionError(f"ADown needs an even channel count, got {c}")
    b._check_shape(c, h, w)
    xa, xb = split_channels(x, [c // 2, c // 2])
    ya = b.conv_a.forward(pool2d(xa, "avg", 2, 1, 0))
    yb = b.conv_b.forward(pool2d(xb, "max", 3, 2, 1))
    return concat_channels([ya, yb])


@dataclass(frozen=True, eq=False)
class SppElanBlock:
    """Entry 1x1 conv, three chained k x k stride-1 max pools, 4-way concat,
    exit 1x1 conv."""

    cv1: ConvUnit
    cv5: ConvUnit
    k: int = SPP_POOL_K

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"SPPELAN pool kernel must be odd, got {self.k}")
        if self.cv5.in_ch != 4 * self.cv1.out_ch:
            raise DimensionError("SPPELAN exit conv must take 4x the entry width")

    @classmethod
    def random(cls, seed, c1, c2, c3, k=SPP_POOL_K):
        rng = as_rng(seed)
        return cls(ConvUnit.random(rng, c1, c3, 1), ConvUnit.random(rng, 4 * c3, c2, 1), k)

    in_ch = property(lambda self: self.cv1.in_ch)
    out_ch = property(lambda self: self.cv5.out_ch)

    def forward(self, x):
        return sppelan_forward(self, x)

    def output_shape(self, shape):
        n, _, h, w = shape
        self._check_size(h, w)
        return n, self.out_ch, h, w

    def _check_size(self, h, w):
        if h < self.k or w < self.k:
            raise DimensionError(f"SPPELAN input {h}x{w} smaller than pool window {self.k}")

    def fuse(self):
        return SppElanBlock(self.cv1.fuse(), self.cv5.fuse(), self.k)

    def cost(self, shape):
        n, _, h, w = shape
        return self.cv1.cost(shape) + self.cv5.cost((n, self.cv5.in_ch, h, w))


def sppelan_forward(b, x):
    x = check_tensor4(x)
    b._check_size(x.shape[2], x.shape[3])
    ys = [b.cv1.forward(x)]
    for _ in range(3):
        ys.append(pool2d(ys[-1], "max", b.k, 1, b.k // 2))
    return b.cv5.forward(concat_channels(ys))


@dataclass(frozen=True, eq=False)
class Upsample:
    factor: int = 2

    def forward(self, x):
        return upsample_nearest(x, self.factor)

    def output_shape(self, shape):
        n, c, h, w = shape
        return n, c, h * self.factor, w * self.factor

    def fuse(self):
        return self

    def cost(self, shape):
        return Cost()


@dataclass(frozen=True, eq=False)
class Concat:
    """Channel concatenation of several inputs, in order."""

    def forward(self, xs):
        return concat_channels(xs)

    def output_shape(self, shapes):
        n, _, h, w = shapes[0]
        for s in shapes[1:]:
            if (s[0], s[2], s[3]) != (n, h, w):
                raise DimensionError(f"Concat inputs disagree spatially: {list(shapes)}")
        return n, sum(s[1] for s in shapes), h, w

    def fuse(self):
        return self

    def cost(self, shapes):
        return Cost()


def upsample_concat(a, b, factor):
    """Upsample the deeper map ``a`` and prepend it to the earlier map ``b``."""
    up = upsample_nearest(a, factor)
    b = np.asarray(b, dtype=DTYPE)
    if b.ndim == 4 and b.shape[1] == 0:
        if b.shape[0] != up.shape[0] or b.shape[2:] != up.shape[2:]:
            raise DimensionError(f"upsample_concat: {up.shape} vs {b.shape}")
        return up
    b = check_tensor4(b, name="b")
    if up.shape[2:] != b.shape[2:]:
        raise DimensionError(f"upsample_concat: upsampled {up.shape[2:]} does not match {b.shape[2:]}")
    return concat_channels([up, b])
