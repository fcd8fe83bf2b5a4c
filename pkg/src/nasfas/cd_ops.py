"""Central difference convolution (CDC) and pooling (CDP)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import Conv2d, Module
from .tensor import ConfigError, ShapeError, Tensor

__all__ = [
    "CdcParams",
    "CdpParams",
    "cdc_forward",
    "cdc_forward_efficient",
    "cdp_forward",
    "CDC",
    "CDP",
    "DEFAULT_THETA",
    "DEFAULT_LAMBDA",
]

DEFAULT_THETA = 0.7
DEFAULT_LAMBDA = 0.7


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class CdcParams:
    theta: float = DEFAULT_THETA
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        _check_unit("theta", self.theta)


@dataclass(frozen=True)
class CdpParams:
    k: int = 3
    stride: int = 2
    lam: float = DEFAULT_LAMBDA
    padding: int | None = None

    def __post_init__(self):
        _check_unit("lambda", self.lam)
        if self.k % 2 == 0:
            raise ConfigError(f"CDP needs an odd window so the center is defined, got k={self.k}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def pad(self) -> int:
        return self.k // 2 if self.padding is None else self.padding


def cdc_forward(x: Tensor, weight: Tensor, params: CdcParams, bias: Tensor | None = None) -> Tensor:
    """Literal two-term CDC, built from explicit per-offset differences.

    Slow; kept as the oracle for :func:`cdc_forward_efficient`.
    """
    _check_unit("theta", params.theta)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"CDC input {x.shape} incompatible with weight {weight.shape}")
    k = weight.shape[-1]
    if k % 2 == 0:
        raise ConfigError("CDC needs an odd kernel so p0 is defined")
    s, p = params.stride, params.padding
    h, w = x.shape[2:]
    ho = F.conv_output_size(h, k, s, p)
    wo = F.conv_output_size(w, k, s, p)
    center = F.center_sample(x, k, s, p)  # x(p0), N x C x Ho x Wo
    padded = _pad_tensor(x, p)
    diff_sum = None
    plain_sum = None
    for i in range(k):
        for j in range(k):
            sample = padded[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
            wij = weight[:, :, i, j]  # C_out x C_in
            diff = _channel_mix(sample - center, wij)
            plain = _channel_mix(sample, wij)
            diff_sum = diff if diff_sum is None else diff_sum + diff
            plain_sum = plain if plain_sum is None else plain_sum + plain
    out = diff_sum * params.theta + plain_sum * (1.0 - params.theta)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def cdc_forward_efficient(x: Tensor, weight: Tensor, params: CdcParams, bias: Tensor | None = None) -> Tensor:
    """``conv(x, w) - theta * x(p0) * sum(w)`` -- one conv plus a 1x1 correction."""
    _check_unit("theta", params.theta)
    out = F.conv2d(x, weight, None, params.stride, params.padding)
    if params.theta != 0.0:
        k = weight.shape[-1]
        center = F.center_sample(x, k, params.stride, params.padding)
        w_sum = weight.sum(axis=(2, 3), keepdims=True)
        out = out - F.conv2d(center, w_sum) * params.theta
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def cdp_forward(x: Tensor, params: CdpParams) -> Tensor:
    """``avg_pool(x) - lambda * x(p0)``; may go negative."""
    out = F.avg_pool2d(x, params.k, params.stride, params.pad)
    if params.lam == 0.0:
        return out
    center = F.center_sample(x, params.k, params.stride, params.pad)
    return out - center * params.lam


def _pad_tensor(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x

    def bw(g):
        return (g[:, :, p:-p, p:-p],)

    return Tensor._make(F.pad2d(x.data, p), (x,), bw, "pad")


def _channel_mix(x: Tensor, w: Tensor) -> Tensor:
    """``y[n, o] = sum_c w[o, c] x[n, c]`` for N x C x H x W maps."""
    n, c, h, wd = x.shape
    flat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    return (flat @ w.transpose(1, 0)).reshape(n, h, wd, -1).transpose(0, 3, 1, 2)


class CDC(Module):
    """Central difference convolution layer; same parameters as a vanilla conv."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int | None = None,
                 theta: float = DEFAULT_THETA, bias: bool = False, rng: np.random.Generator | None = None):
        super().__init__()
        _check_unit("theta", theta)
        self.conv = Conv2d(c_in, c_out, k, stride, padding, bias=bias, rng=rng)
        self.theta = theta

    @property
    def weight(self):
        return self.conv.weight

    def forward(self, x):
        params = CdcParams(self.theta, self.conv.stride, self.conv.padding)
        return cdc_forward_efficient(x, self.conv.weight, params, self.conv.bias)


class CDP(Module):
    def __init__(self, k: int = 3, stride: int = 2, lam: float = DEFAULT_LAMBDA):
        super().__init__()
        self.params = CdpParams(k, stride, lam)

    def forward(self, x):
        return cdp_forward(x, self.params)
