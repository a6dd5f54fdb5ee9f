"""Seeded random parameter factories.

Nothing here is trained; the weights only need realistic magnitudes so that
fusion and decode paths see non-trivial values.
"""

import numpy as np

from .tensor import BnParams, ConvParams
from .validation import DTYPE


def as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_conv(rng, c1, c2, k, stride=1, padding=None, groups=1, bias=False):
    if padding is None:
        padding = k // 2
    fan_in = (c1 // groups) * k * k
    weight = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(c2, c1 // groups, k, k)).astype(DTYPE)
    b = rng.normal(0.0, 0.1, size=c2).astype(DTYPE) if bias else None
    return ConvParams(weight, b, stride=stride, padding=padding, groups=groups)


def random_bn(rng, channels, eps=1e-5):
    return BnParams(
        gamma=rng.uniform(0.5, 1.5, channels).astype(DTYPE),
        beta=rng.normal(0.0, 0.1, channels).astype(DTYPE),
        running_mean=rng.normal(0.0, 0.1, channels).astype(DTYPE),
        running_var=rng.uniform(0.5, 1.5, channels).astype(DTYPE),
        eps=eps,
    )
