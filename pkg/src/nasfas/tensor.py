"""Dense tensors with tape-free reverse-mode autodiff.

Every differentiable operation builds an output :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
Node ids increase monotonically, so sorting the reachable sub-graph by id
gives a valid topological order for the backward sweep.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "GraphError",
    "ShapeError",
    "ConfigError",
    "NumericError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "default_dtype",
    "get_default_dtype",
    "set_default_dtype",
    "save_snapshot",
    "load_snapshot",
    "snapshot_bytes",
    "snapshot_from_bytes",
]


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (non-scalar backward, consumed graph)."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """Invalid operator configuration (stride, padding, theta, ...)."""


class NumericError(ArithmeticError):
    """A loss or update became non-finite."""


_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_ids = itertools.count()


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the default floating precision."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, Tensor):
        value = value.data
    arr = np.asarray(value)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else _DEFAULT_DTYPE
    return np.ascontiguousarray(arr, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional array with an optional autodiff node."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._consumed = False

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Iterable["Tensor"], backward, op: str) -> "Tensor":
        parents = tuple(parents)
        out = cls.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.id = next(_ids)
        out._consumed = False
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        out._op = op
        return out

    # -- basic properties -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff -------------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad, self.data.dtype).reshape(self.shape)
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring grad")

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node.id in nodes:
                continue
            if node._consumed:
                raise GraphError("graph already consumed by a previous backward(); run a new forward pass")
            nodes[node.id] = node
            stack.extend(node._parents)
        grads: dict[int, np.ndarray] = {self.id: grad}
        for nid in sorted(nodes, reverse=True):
            node = nodes[nid]
            g = grads.pop(nid, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        self._consumed = True
        # release intermediate buffers
        for node in nodes.values():
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _lift(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._make(self.data + other.data, (self, other), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor._make(self.data - other.data, (self, other), bw, "sub")

    def __rsub__(self, other):
        return _lift(other, self.dtype) - self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.data, other.data

        def bw(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(a * b, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.data, other.data

        def bw(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._make(a / b, (self, other), bw, "div")

    def __rtruediv__(self, other):
        return _lift(other, self.dtype) / self

    def __pow__(self, exponent: float):
        a = self.data
        exponent = float(exponent)

        def bw(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor._make(a**exponent, (self,), bw, "pow")

    def __matmul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

        def bw(g):
            return g @ b.T, a.T @ g

        return Tensor._make(a @ b, (self, other), bw, "matmul")

    # -- elementwise ----------------------------------------------------------
    def relu(self):
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def sigmoid(self):
        out = _sigmoid(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out * (1 - out),), "sigmoid")

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def clip(self, lo: float, hi: float):
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * mask,), "clip")

    # -- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        axes = _norm_axes(axis, self.ndim)

        def bw(g):
            if not keepdims and axes:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.sum(self.data, axis=axes, keepdims=keepdims), (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        axes = _norm_axes(axis, self.ndim)
        if self.size == 0:
            raise ShapeError("mean over an empty tensor")
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        if count == 0:
            raise ShapeError("mean over an empty axis")
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / count)

    def max(self, axis=None, keepdims: bool = False):
        if self.size == 0:
            raise ShapeError("max over an empty tensor")
        axes = _norm_axes(axis, self.ndim)
        a = self.data
        out = np.max(a, axis=axes, keepdims=True)
        mask = a == out
        # ties split the gradient evenly
        mask = mask / mask.sum(axis=axes, keepdims=True)
        res = out if keepdims else np.squeeze(out, axis=axes)

        def bw(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (g * mask,)

        return Tensor._make(res, (self,), bw, "max")

    # -- shape ----------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(
            np.ascontiguousarray(self.data.transpose(axes)), (self,), lambda g: (g.transpose(inv),), "transpose"
        )

    def __getitem__(self, idx):
        src_shape, dtype = self.shape, self.dtype

        def bw(g):
            full = np.zeros(src_shape, dtype=dtype)
            if _has_fancy(idx):
                np.add.at(full, idx, g)
            else:
                full[idx] = np.reshape(g, full[idx].shape)
            return (full,)

        return Tensor._make(np.ascontiguousarray(self.data[idx]), (self,), bw, "getitem")


class Parameter(Tensor):
    """Leaf tensor that always tracks gradients."""

    def __init__(self, data, dtype=None, name: str | None = None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-D tensor")
        out.append(a % ndim)
    return tuple(sorted(out))


def _has_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


# -- snapshot file format -----------------------------------------------------
_MAGIC = b"CDNT"
_VERSION = 1


def snapshot_bytes(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    head = _MAGIC + struct.pack("<BI", _VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def snapshot_from_bytes(buf: bytes) -> Tensor:
    if buf[:4] != _MAGIC:
        raise ValueError("not a tensor snapshot (bad magic)")
    version, rank = struct.unpack_from("<BI", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    offset = 4 + 5
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    if len(buf) != offset + 4 * count:
        raise ValueError("snapshot payload size does not match its header")
    return Tensor(data.reshape(dims).astype(np.float32))


def save_snapshot(path, t: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(snapshot_bytes(t))


def load_snapshot(path) -> Tensor:
    return snapshot_from_bytes(Path(path).read_bytes())
