"""DepthNet and the central difference networks (CDN_CDC, CDN_CDP)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .cd_ops import CDC, CDP, DEFAULT_LAMBDA, DEFAULT_THETA
from .nn import BatchNorm, Conv2d, Module, ModuleList, param_count
from .tensor import ConfigError, Tensor

__all__ = ["CdnConfig", "CDN", "ConvBlock", "build_cdn", "forward_depth", "init_depth_head", "param_count", "VARIANTS"]

VARIANTS = ("depthnet", "cdn_cdc", "cdn_cdp")

STEM_WIDTH = 64
BLOCK_WIDTHS = (128, 196, 128)
HEAD_WIDTHS = (128, 64)


@dataclass(frozen=True)
class CdnConfig:
    variant: str = "depthnet"
    theta: float = DEFAULT_THETA
    lam: float = DEFAULT_LAMBDA
    input_size: int = 64
    width: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_size % 8 or self.input_size <= 0:
            raise ConfigError(f"input size must be a positive multiple of 8, got {self.input_size}")
        if self.width <= 0:
            raise ConfigError("width multiplier must be positive")

    def channels(self, base: int) -> int:
        return max(1, int(round(base * self.width)))

    def to_dict(self) -> dict:
        return asdict(self)


class ConvBlock(Module):
    """3x3 conv (vanilla or CDC) followed by BN-ReLU."""

    def __init__(self, c_in, c_out, theta: float | None, rng):
        super().__init__()
        if theta is None:
            self.conv = Conv2d(c_in, c_out, 3, rng=rng)
        else:
            self.conv = CDC(c_in, c_out, 3, theta=theta, rng=rng)
        self.bn = BatchNorm(c_out)

    def forward(self, x):
        return self.bn(self.conv(x)).relu()


def init_depth_head(layer: Module, weight_scale: float = 0.1, bias: float = 0.2) -> None:
    """Start the final 1-channel conv smooth and positive so its ReLU is not dead at step 0."""
    conv = layer.conv if isinstance(layer, CDC) else layer
    conv.weight.data = conv.weight.data * weight_scale
    if conv.bias is not None:
        conv.bias.data[:] = bias


class _MaxPool(Module):
    def forward(self, x):
        return F.max_pool2d(x, 3, 2, 1)


class CDN(Module):
    def __init__(self, config: CdnConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        theta = config.theta if config.variant == "cdn_cdc" else None
        ch = config.channels
        self.stem = ConvBlock(3, ch(STEM_WIDTH), theta, rng)
        self.blocks = ModuleList()
        self.pools = ModuleList()
        c_prev = ch(STEM_WIDTH)
        for _ in range(3):
            layers = ModuleList()
            for width in BLOCK_WIDTHS:
                layers.append(ConvBlock(c_prev, ch(width), theta, rng))
                c_prev = ch(width)
            self.blocks.append(layers)
            self.pools.append(CDP(3, 2, config.lam) if config.variant == "cdn_cdp" else _MaxPool())
        c_cat = 3 * ch(BLOCK_WIDTHS[-1])
        self.head = ModuleList([ConvBlock(c_cat, ch(HEAD_WIDTHS[0]), theta, rng),
                                ConvBlock(ch(HEAD_WIDTHS[0]), ch(HEAD_WIDTHS[1]), theta, rng)])
        last = ch(HEAD_WIDTHS[1])
        self.out = CDC(last, 1, 3, theta=theta, bias=True, rng=rng) if theta is not None else Conv2d(last, 1, 3, bias=True, rng=rng)
        init_depth_head(self.out)

    def features(self, x: Tensor) -> list[Tensor]:
        """Low, mid and high level maps before fusion."""
        x = self.stem(x)
        levels = []
        for layers, pool in zip(self.blocks, self.pools):
            for layer in layers:
                x = layer(x)
            x = pool(x)
            levels.append(x)
        return levels

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        low, mid, high = self.features(x)
        size = high.shape[-2:]
        fused = F.concat([F.resize_bilinear(low, size), F.resize_bilinear(mid, size), high], axis=1)
        y = fused
        for layer in self.head:
            y = layer(y)
        y = self.out(y).relu()
        return y.reshape(y.shape[0], *y.shape[2:])


def build_cdn(config: CdnConfig | None = None, **kwargs) -> CDN:
    return CDN(config or CdnConfig(**kwargs))


def forward_depth(net: Module, x) -> Tensor:
    """Predicted depth map(s); a single 3 x S x S input yields an (S/8) x (S/8) map."""
    single = getattr(x, "ndim", np.ndim(x)) == 3
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    y = net(x)
    return y.reshape(*y.shape[1:]) if single else y
