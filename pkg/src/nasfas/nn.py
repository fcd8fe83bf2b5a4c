"""Module containers, basic layers and optimizers on top of the tensor core."""

from __future__ import annotations

import json
import zipfile
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor, get_default_dtype, snapshot_bytes, snapshot_from_bytes

__all__ = [
    "Module",
    "ModuleList",
    "Sequential",
    "Conv2d",
    "BatchNorm",
    "Linear",
    "ReLU",
    "Identity",
    "uniform_fan_in",
    "param_count",
    "SGD",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
]


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> np.ndarray:
    """Centered uniform init with bound ``sqrt(6 / fan_in)``."""
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype or get_default_dtype())


class Module:
    """Container that auto-registers parameters and child modules by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen = set()
        for name, p in self._named_parameters(prefix):
            if id(p) in seen:
                continue
            seen.add(id(p))
            yield name, p

    def _named_parameters(self, prefix):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m._named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            unexpected = set(state) - set(own)
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            if name in own:
                p = own[name]
                value = np.asarray(value.data if isinstance(value, Tensor) else value)
                if value.shape != p.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = value.astype(p.dtype).copy()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


class Sequential(ModuleList):
    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


class Identity(Module):
    def forward(self, x):
        return x


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int | None = None,
                 dilation: int = 1, groups: int = 1, bias: bool = False, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if padding is None:
            padding = dilation * (k - 1) // 2
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups
        c_in_g = c_in // groups
        fan_in = c_in_g * k * k
        self.weight = Parameter(uniform_fan_in(rng, (c_out, c_in_g, k, k), fan_in))
        self.bias = Parameter(np.zeros(c_out, dtype=get_default_dtype())) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


class BatchNorm(Module):
    """Batch-statistics normalization with an optional per-channel affine map."""

    def __init__(self, channels: int, affine: bool = True, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        dtype = get_default_dtype()
        if affine:
            self.gamma = Parameter(np.ones(channels, dtype=dtype))
            self.beta = Parameter(np.zeros(channels, dtype=dtype))
        else:
            self.gamma = self.beta = None

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(uniform_fan_in(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out, dtype=get_default_dtype())) if bias else None

    def forward(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


def param_count(module: Module) -> int:
    return int(sum(p.size for p in module.parameters()))


class SGD:
    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            p.data = p.data - self.lr * g

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adaptive-moment optimizer with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            update = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def save_checkpoint(path, module: Module, config: dict) -> None:
    """Write a zip archive of tensor snapshots plus a JSON config echo."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(config, indent=2, sort_keys=True))
        for name, arr in module.state_dict().items():
            zf.writestr(f"tensors/{name}.cdnt", snapshot_bytes(arr))


def load_checkpoint(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    state = OrderedDict()
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        for info in zf.infolist():
            if info.filename.startswith("tensors/"):
                name = info.filename[len("tensors/"):-len(".cdnt")]
                state[name] = snapshot_from_bytes(zf.read(info)).data
    return config, state
