"""Parameter and operation counting.

Counting rules:

* one multiply-add (MAC) is two FLOPs; a convolution costs
  ``out_ch * (in_ch / groups) * kh * kw * ho * wo`` MACs per image and its
  bias addition is free;
* an unfused batch norm costs 2 FLOPs per output element, a fused one 0;
* an activation costs 1 FLOP per element;
* pooling, upsampling, concatenation, channel shuffle, branch sums,
  residual additions and the box decode are not counted.

Parameters are weights plus biases plus batch-norm affine terms; running
statistics are buffers and do not count.
"""

from dataclasses import dataclass

from .tensor import conv_output_size


@dataclass(frozen=True)
class Cost:
    params: int = 0
    macs: int = 0
    bn_elems: int = 0
    act_elems: int = 0

    def __add__(self, other):
        return Cost(
            self.params + other.params,
            self.macs + other.macs,
            self.bn_elems + other.bn_elems,
            self.act_elems + other.act_elems,
        )

    def scaled(self, batch):
        # params do not scale with batch size
        return Cost(self.params, self.macs * batch, self.bn_elems * batch, self.act_elems * batch)

    @property
    def flops(self):
        return 2 * self.macs + 2 * self.bn_elems + self.act_elems


def total(costs):
    out = Cost()
    for c in costs:
        out = out + c
    return out


def conv_shape(p, in_shape):
    n, _, h, w = in_shape
    kh, kw = p.kernel_size
    return n, p.out_ch, conv_output_size(h, kh, p.stride, p.padding), conv_output_size(w, kw, p.stride, p.padding)


def conv_cost(p, in_shape):
    """Per-image cost of one convolution on an input of ``in_shape``."""
    _, _, ho, wo = conv_shape(p, in_shape)
    kh, kw = p.kernel_size
    macs = p.out_ch * (p.in_ch // p.groups) * kh * kw * ho * wo
    return Cost(params=p.n_params, macs=macs)


def bn_cost(bn, out_shape):
    _, c, h, w = out_shape
    return Cost(params=bn.n_params, bn_elems=c * h * w)


def act_cost(kind, out_shape):
    if kind == "identity":
        return Cost()
    _, c, h, w = out_shape
    return Cost(act_elems=c * h * w)
