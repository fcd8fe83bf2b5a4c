"""Candidate operations for the baseline and FAS search spaces.

Every constructor has the signature ``(C, stride, rng) -> Module`` and maps
``N x C x H x W`` to ``N x C x H/stride x W/stride``.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .cd_ops import CDC, CDP
from .nn import BatchNorm, Conv2d, Module, Sequential

__all__ = [
    "OPS",
    "Zero",
    "Identity",
    "FactorizedReduce",
    "ReLUConvBN",
    "SepConv",
    "DilConv",
    "MaxPool",
    "AvgPool",
    "ConvBNReLU",
    "Expand2",
    "SpatialAttention",
    "spatial_attention",
]


class Zero(Module):
    def __init__(self, stride: int = 1):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        if self.stride > 1:
            x = x[:, :, ::self.stride, ::self.stride]
        return x * 0.0


class Identity(Module):
    def forward(self, x):
        return x


class FactorizedReduce(Module):
    """Halve spatial size with two offset 1x1 stride-2 convs."""

    def __init__(self, c_in, c_out, rng):
        super().__init__()
        half = c_out // 2
        self.conv_1 = Conv2d(c_in, half, 1, stride=2, padding=0, rng=rng)
        self.conv_2 = Conv2d(c_in, c_out - half, 1, stride=2, padding=0, rng=rng)
        self.bn = BatchNorm(c_out)

    def forward(self, x):
        x = x.relu()
        shifted = x[:, :, 1:, 1:]
        a = self.conv_1(x)
        b = self.conv_2(shifted)
        if b.shape[-1] != a.shape[-1] or b.shape[-2] != a.shape[-2]:
            b = F.resize_bilinear(b, a.shape[-2:])
        return self.bn(F.concat([a, b], axis=1))


class ReLUConvBN(Module):
    def __init__(self, c_in, c_out, k, stride, padding, rng):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, k, stride, padding, rng=rng)
        self.bn = BatchNorm(c_out)

    def forward(self, x):
        return self.bn(self.conv(x.relu()))


class DilConv(Module):
    def __init__(self, c_in, c_out, k, stride, padding, dilation, rng):
        super().__init__()
        self.dw = Conv2d(c_in, c_in, k, stride, padding, dilation, groups=c_in, rng=rng)
        self.pw = Conv2d(c_in, c_out, 1, padding=0, rng=rng)
        self.bn = BatchNorm(c_out)

    def forward(self, x):
        return self.bn(self.pw(self.dw(x.relu())))


class SepConv(Module):
    def __init__(self, c_in, c_out, k, stride, padding, rng):
        super().__init__()
        self.op = Sequential([DilConv(c_in, c_in, k, stride, padding, 1, rng),
                              DilConv(c_in, c_out, k, 1, padding, 1, rng)])

    def forward(self, x):
        return self.op(x)


class CDCConvBN(Module):
    """ReLU -> CDC -> BN, the CD-space replacement for the dilated conv."""

    def __init__(self, c, stride, theta, rng):
        super().__init__()
        self.conv = CDC(c, c, 3, stride, theta=theta, rng=rng)
        self.bn = BatchNorm(c)

    def forward(self, x):
        return self.bn(self.conv(x.relu()))


class MaxPool(Module):
    def __init__(self, stride: int = 1):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        return F.max_pool2d(x, 3, self.stride, 1)


class AvgPool(Module):
    def __init__(self, stride: int = 1):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        return F.avg_pool2d(x, 3, self.stride, 1)


class ConvBNReLU(Module):
    """3x3 conv (vanilla, or CDC when ``theta`` is given) -> BN -> ReLU."""

    def __init__(self, c_in, c_out, rng, theta: float | None = None, stride: int = 1):
        super().__init__()
        if theta is None:
            self.conv = Conv2d(c_in, c_out, 3, stride, rng=rng)
        else:
            self.conv = CDC(c_in, c_out, 3, stride, theta=theta, rng=rng)
        self.bn = BatchNorm(c_out)

    def forward(self, x):
        return self.bn(self.conv(x)).relu()


class Expand2(Module):
    """Two stacked 3x3 convs: C -> r*C -> C."""

    def __init__(self, c, ratio, rng, theta=None, stride: int = 1):
        super().__init__()
        self.up = ConvBNReLU(c, c * ratio, rng, theta, stride)
        self.down = ConvBNReLU(c * ratio, c, rng, theta)

    def forward(self, x):
        return self.down(self.up(x))


def _skip(c, stride, rng):
    return Identity() if stride == 1 else FactorizedReduce(c, c, rng)


THETA = 0.7
LAMBDA = 0.7

OPS = {
    "none": lambda c, stride, rng: Zero(stride),
    "skip_connect": _skip,
    "max_pool_3x3": lambda c, stride, rng: MaxPool(stride),
    "avg_pool_3x3": lambda c, stride, rng: AvgPool(stride),
    "CDP_0.7_3x3": lambda c, stride, rng: CDP(3, stride, LAMBDA),
    "sep_conv_3x3": lambda c, stride, rng: SepConv(c, c, 3, stride, 1, rng),
    "sep_conv_5x5": lambda c, stride, rng: SepConv(c, c, 5, stride, 2, rng),
    "dil_conv_3x3": lambda c, stride, rng: DilConv(c, c, 3, stride, 2, 2, rng),
    "CDC_0.7_3x3": lambda c, stride, rng: CDCConvBN(c, stride, THETA, rng),
    # FAS space
    "conv": lambda c, stride, rng: ConvBNReLU(c, c, rng, None, stride),
    "CDC": lambda c, stride, rng: ConvBNReLU(c, c, rng, THETA, stride),
}
for _r in (2, 4, 6, 8):
    OPS[f"conv_2_{_r}"] = (lambda r: lambda c, stride, rng: Expand2(c, r, rng, None, stride))(_r)
    OPS[f"CDC_2_{_r}"] = (lambda r: lambda c, stride, rng: Expand2(c, r, rng, THETA, stride))(_r)


class SpatialAttention(Module):
    """Gate features by ``sigmoid(conv_k([mean_c(x), max_c(x)]))``."""

    def __init__(self, k: int = 7, rng: np.random.Generator | None = None):
        super().__init__()
        self.k = k
        self.conv = Conv2d(2, 1, k, padding=(k - 1) // 2, bias=True, rng=rng)

    def gate(self, x):
        desc = F.concat([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
        return self.conv(desc).sigmoid()

    def forward(self, x):
        return x * self.gate(x)


def spatial_attention(features, weight, bias):
    """Functional form of :class:`SpatialAttention` with explicit conv parameters."""
    k = weight.shape[-1]
    desc = F.concat([features.mean(axis=1, keepdims=True), features.max(axis=1, keepdims=True)], axis=1)
    gate = F.conv2d(desc, weight, bias, padding=(k - 1) // 2).sigmoid()
    return features * gate
