"""Differentiable architecture search: supernets, bi-level steps and discretization."""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import functional as F
from .cd_ops import CDC, CDP, DEFAULT_LAMBDA, DEFAULT_THETA
from .cdn import init_depth_head
from .genotype import Edge, GenoCell, Genotype
from .losses import binary_target, cross_entropy, deeppixel_loss, overall_depth_loss
from .nn import BatchNorm, Conv2d, Linear, Module, ModuleList, ReLU, Sequential
from .ops import OPS, ConvBNReLU, FactorizedReduce, ReLUConvBN, SpatialAttention, Zero
from .search_spaces import ATTENTION_KERNELS, CellKind, SearchSpace, validate_genotype
from .tensor import ConfigError, NumericError, Parameter, ShapeError, Tensor

__all__ = [
    "mixed_op_forward",
    "partial_channel_forward",
    "node_forward",
    "MixedOp",
    "Cell",
    "BaselineNetwork",
    "FasNetwork",
    "build_supernet",
    "materialize",
    "SupernetState",
    "inner_weight_step",
    "arch_step",
    "discretize",
    "task_loss",
    "predict_scores",
]


# ---------------------------------------------------------------------------
# mixed operations
# ---------------------------------------------------------------------------

def mixed_op_forward(x: Tensor, alpha: Tensor, ops) -> Tensor:
    """``sum_o softmax(alpha)_o * o(x)``; ``Zero`` ops are skipped since they add nothing."""
    if alpha.shape != (len(ops),):
        raise ShapeError(f"alpha has shape {alpha.shape}, expected ({len(ops)},)")
    beta = F.softmax(alpha, axis=-1)
    out = None
    shape = None
    zero_shape = None
    for i, op in enumerate(ops):
        if isinstance(op, Zero):
            zero_shape = zero_shape or op(x).shape
            continue
        y = op(x)
        if shape is None:
            shape = y.shape
        elif y.shape != shape:
            raise ShapeError(f"candidate op {i} produced {y.shape}, expected {shape}")
        term = y * beta[i]
        out = term if out is None else out + term
    if out is None:
        return ops[0](x)
    if zero_shape is not None and zero_shape != shape:
        raise ShapeError(f"zero op shape {zero_shape} differs from {shape}")
    return out


def partial_channel_forward(x: Tensor, alpha: Tensor, ops, channels: np.ndarray, stride: int = 1) -> Tensor:
    """Run the mixed op on ``channels`` only; the remaining channels bypass it."""
    c = x.shape[1]
    channels = np.asarray(channels, dtype=np.int64)
    if len(channels) == c:
        return mixed_op_forward(x, alpha, ops)
    rest = np.setdiff1d(np.arange(c), channels)
    y = mixed_op_forward(x[:, channels], alpha, ops)
    bypass = x[:, rest]
    if stride > 1:
        bypass = F.max_pool2d(bypass, 3, stride, 1)
    merged = F.concat([y, bypass], axis=1)
    order = np.argsort(np.concatenate([channels, rest]))
    return merged[:, order]


def node_forward(states, node: int, kind: CellKind, edge_fn: Callable[[int, Tensor], Tensor],
                 weights: Tensor | None = None) -> Tensor:
    """``x_j = sum_i w_i * f_ij(x_i)`` over the node's predecessors (``w`` = 1 without edge normalization)."""
    out = None
    for k, src in enumerate(kind.incoming(node)):
        y = edge_fn(src, states[src])
        if weights is not None:
            y = y * weights[k]
        out = y if out is None else out + y
    return out


class MixedOp(Module):
    def __init__(self, c: int, stride: int, op_names, rng: np.random.Generator, partial: int = 1):
        super().__init__()
        if partial < 1 or c % partial:
            raise ConfigError(f"partial-channel factor {partial} must divide channel count {c}")
        self.op_names = tuple(op_names)
        self.stride = stride
        self.partial = partial
        c_op = c // partial
        # drawn even when partial == 1 so supernets differing only in Kpc share weight streams
        self.channels = np.sort(rng.permutation(c)[:c_op])
        self.ops = ModuleList([OPS[name](c_op, stride, rng) for name in self.op_names])

    def forward(self, x, alpha):
        if self.partial == 1:
            return mixed_op_forward(x, alpha, self.ops)
        return partial_channel_forward(x, alpha, self.ops, self.channels, self.stride)


class Cell(Module):
    """A searchable (``genotype_cell=None``) or discrete cell over ``kind``'s DAG."""

    def __init__(self, kind: CellKind, c: int, op_names, rng, genotype_cell: GenoCell | None = None,
                 partial: int = 1, pre: list[Module] | None = None):
        super().__init__()
        self.kind = kind
        self.pre = ModuleList(pre or [])
        self.discrete = genotype_cell is not None
        if self.discrete:
            self.kept_edges = sorted(genotype_cell.edges)
            self.kept = ModuleList([OPS[e.op](c, self._stride(e.src), rng) for e in self.kept_edges])
        else:
            self.edge_list = kind.edges()
            self.edge_pos = {e: i for i, e in enumerate(self.edge_list)}
            self.edges = ModuleList([MixedOp(c, self._stride(src), op_names, rng, partial)
                                     for (_, src) in self.edge_list])

    def _stride(self, src: int) -> int:
        return 2 if self.kind.reduction and src < self.kind.n_inputs else 1

    def forward(self, inputs, alpha: Tensor | None = None, edge_param: Tensor | None = None):
        states = [p(x) for p, x in zip(self.pre, inputs)] if len(self.pre) else list(inputs)
        for node in self.kind.intermediates:
            if self.discrete:
                out = None
                for e, op in zip(self.kept_edges, self.kept):
                    if e.to == node:
                        y = op(states[e.src])
                        out = y if out is None else out + y
                states.append(out)
                continue
            idx = [self.edge_pos[(node, src)] for src in self.kind.incoming(node)]
            weights = None
            if edge_param is not None and len(idx) > 1:
                weights = F.softmax(edge_param[np.asarray(idx)], axis=-1)

            def edge_fn(src, x, node=node):
                e = self.edge_pos[(node, src)]
                return self.edges[e](x, alpha[e])

            states.append(node_forward(states, node, self.kind, edge_fn, weights))
        return states


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class _SearchNet(Module):
    """Shared bookkeeping for supernets and their discrete counterparts."""

    def _init_arch(self, space: SearchSpace, rng, edge_norm: bool):
        self._arch_names: list[str] = []
        self.edge_norm = edge_norm
        if self.genotype is not None:
            return
        for kind in space.kinds:
            n = len(kind.edges())
            name = f"alpha_{kind.name}"
            setattr(self, name, Parameter(1e-3 * rng.standard_normal((n, len(space.ops)))))
            self._arch_names.append(name)
            if edge_norm:
                name = f"edge_{kind.name}"
                setattr(self, name, Parameter(np.zeros(n)))
                self._arch_names.append(name)

    def _arch(self, kind: str):
        if self.genotype is not None:
            return None, None
        alpha = getattr(self, f"alpha_{kind}")
        edge = getattr(self, f"edge_{kind}") if self.edge_norm else None
        return alpha, edge

    def arch_parameters(self) -> list[Parameter]:
        return [getattr(self, n) for n in self._arch_names]

    def weight_parameters(self) -> list[Parameter]:
        arch = {id(p) for p in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def alphas(self) -> dict[str, np.ndarray]:
        return {k.name: getattr(self, f"alpha_{k.name}").data.copy() for k in self.space.kinds}

    def set_alphas(self, alphas: dict[str, np.ndarray]) -> None:
        for name, value in alphas.items():
            p = getattr(self, f"alpha_{name}")
            p.data = np.asarray(value, dtype=p.dtype).reshape(p.shape).copy()

    def scores(self, out: Tensor) -> np.ndarray:
        """Per-sample liveness score from raw network output (higher = more live)."""
        y = out.data
        if self.space.head == "cross-entropy":
            z = y - y.max(axis=1, keepdims=True)
            p = np.exp(z)
            return p[:, 1] / p.sum(axis=1)
        if self.space.head == "deeppixel":
            return F.sigmoid_np(y).reshape(len(y), -1).mean(axis=1)
        return y.reshape(len(y), -1).mean(axis=1)


def _stem_strides(input_size: int) -> tuple[int, int]:
    factor = input_size // 64
    if factor not in (1, 2, 4):
        raise ConfigError(f"baseline network supports input sizes 64, 128 and 256, got {input_size}")
    return (2 if factor >= 2 else 1, 2 if factor == 4 else 1)


class BaselineNetwork(_SearchNet):
    """Stem, nine cells (N N R) x 3 sharing one architecture per cell kind, and a fixed head."""

    def __init__(self, space: SearchSpace, genotype: Genotype | None = None, channel_multiplier: int = 1,
                 seed: int = 0, partial: int = 1, edge_norm: bool = False):
        super().__init__()
        if space.name != "baseline":
            raise ConfigError("BaselineNetwork needs a baseline search space")
        self.space, self.genotype = space, genotype
        rng = np.random.default_rng(seed)
        c = space.channels * channel_multiplier
        s0, s1 = _stem_strides(space.input_size)
        self.stem0 = Sequential([Conv2d(3, c, 3, s0, rng=rng), BatchNorm(c)])
        self.stem1 = Sequential([ReLU(), Conv2d(c, c, 3, s1, rng=rng), BatchNorm(c)])
        self.cells = ModuleList()
        c_pp, c_p, c_cur, red_prev = c, c, c, False
        for name in space.layout:
            kind = space.kind(name)
            if kind.reduction:
                c_cur *= 2
            pre0 = FactorizedReduce(c_pp, c_cur, rng) if red_prev else ReLUConvBN(c_pp, c_cur, 1, 1, 0, rng)
            pre1 = ReLUConvBN(c_p, c_cur, 1, 1, 0, rng)
            gcell = genotype.cell(name) if genotype is not None else None
            self.cells.append(Cell(kind, c_cur, space.ops, rng, gcell, partial, [pre0, pre1]))
            c_pp, c_p, red_prev = c_p, kind.n_intermediate * c_cur, kind.reduction
        if space.head == "deeppixel":
            self.head = Conv2d(c_p, 1, 1, padding=0, bias=True, rng=rng)
        else:
            self.head = Linear(c_p, 2, rng=rng)
        self._init_arch(space, rng, edge_norm)

    def forward(self, x: Tensor) -> Tensor:
        s0 = self.stem0(x)
        s1 = self.stem1(s0)
        for cell in self.cells:
            alpha, edge = self._arch(cell.kind.name)
            states = cell([s0, s1], alpha, edge)
            s0, s1 = s1, F.concat(states[cell.kind.n_inputs:], axis=1)
        if self.space.head == "deeppixel":
            y = self.head(s1.relu())
            return y.reshape(y.shape[0], *y.shape[2:])
        return self.head(s1.mean(axis=(2, 3)))


class _MaxPoolDown(Module):
    def forward(self, x):
        return F.max_pool2d(x, 3, 2, 1)


class FasNetwork(_SearchNet):
    """Stem, low/mid/high chain cells each followed by pooling (and optional attention), depth head."""

    def __init__(self, space: SearchSpace, genotype: Genotype | None = None, channel_multiplier: int = 1,
                 seed: int = 0, partial: int = 1, edge_norm: bool = False, lam: float = DEFAULT_LAMBDA):
        super().__init__()
        if space.name != "fas":
            raise ConfigError("FasNetwork needs a FAS search space")
        self.space, self.genotype = space, genotype
        rng = np.random.default_rng(seed)
        c = space.channels * channel_multiplier
        theta = DEFAULT_THETA if space.variant == "cd" else None
        self.stem = ConvBNReLU(3, c, rng, theta)
        self.cells = ModuleList()
        self.pools = ModuleList()
        self.attention = ModuleList()
        for level, name in enumerate(space.layout):
            gcell = genotype.cell(name) if genotype is not None else None
            self.cells.append(Cell(space.kind(name), c, space.ops, rng, gcell, partial))
            self.pools.append(CDP(3, 2, lam) if space.pooling == "cdp" else _MaxPoolDown())
            if space.attention:
                self.attention.append(SpatialAttention(ATTENTION_KERNELS[level], rng))
        self.head = ConvBNReLU(3 * c, c, rng, theta)
        self.out = CDC(c, 1, 3, theta=theta, bias=True, rng=rng) if theta is not None else \
            Conv2d(c, 1, 3, bias=True, rng=rng)
        init_depth_head(self.out)
        self._init_arch(space, rng, edge_norm)

    def levels(self, x: Tensor) -> list[Tensor]:
        x = self.stem(x)
        out = []
        for i, cell in enumerate(self.cells):
            alpha, edge = self._arch(cell.kind.name)
            x = cell([x], alpha, edge)[-1]
            x = self.pools[i](x)
            if self.space.attention:
                x = self.attention[i](x)
            out.append(x)
        return out

    def forward(self, x: Tensor) -> Tensor:
        levels = self.levels(x)
        size = levels[-1].shape[-2:]
        fused = F.concat([F.resize_bilinear(t, size) if t.shape[-2:] != size else t for t in levels], axis=1)
        y = self.out(self.head(fused)).relu()
        return y.reshape(y.shape[0], *y.shape[2:])


def build_supernet(space: SearchSpace, seed: int = 0, partial: int = 1, edge_norm: bool = False) -> _SearchNet:
    cls = BaselineNetwork if space.name == "baseline" else FasNetwork
    return cls(space, None, 1, seed, partial, edge_norm)


def materialize(genotype: Genotype, space: SearchSpace, channel_multiplier: int = 2, seed: int = 0,
                supernet: _SearchNet | None = None) -> _SearchNet:
    """Discrete network for ``genotype``; optionally inherit weights from ``supernet``."""
    validate_genotype(genotype, space)
    cls = BaselineNetwork if space.name == "baseline" else FasNetwork
    net = cls(space, genotype, channel_multiplier, seed)
    if supernet is not None:
        _inherit(net, supernet)
    return net


def _inherit(net: _SearchNet, supernet: _SearchNet) -> None:
    source = dict(supernet.named_parameters())
    for ci, cell in enumerate(net.cells):
        sup = supernet.cells[ci]
        for k, e in enumerate(cell.kept_edges):
            mixed = sup.edges[sup.edge_pos[(e.to, e.src)]]
            if mixed.partial != 1:
                raise ConfigError("weight inheritance needs a supernet without partial channels")
            prefix = f"cells.{ci}.edges.{sup.edge_pos[(e.to, e.src)]}.ops.{mixed.op_names.index(e.op)}."
            for name, p in cell.kept[k].named_parameters(f"cells.{ci}.kept.{k}."):
                source[name] = source[prefix + name.split(f"kept.{k}.", 1)[1]]
    for name, p in net.named_parameters():
        src = source.get(name)
        if src is None or src.shape != p.shape:
            raise ConfigError(f"cannot inherit parameter {name!r} from the supernet")
        p.data = src.data.copy()


# ---------------------------------------------------------------------------
# losses and scores
# ---------------------------------------------------------------------------

def task_loss(space: SearchSpace) -> Callable[[Module, Any], Tensor]:
    """Loss over a batch ``(x, labels, depth)`` matching the space's head."""
    head = space.head

    def loss(model, batch):
        x, labels, depth = batch[0], batch[1], batch[2]
        x = x if isinstance(x, Tensor) else Tensor(x)
        out = model(x)
        if head == "depth":
            return overall_depth_loss(out, depth)
        if head == "deeppixel":
            size = out.shape[-1]
            target = np.stack([binary_target(int(lbl), size) for lbl in labels])
            return deeppixel_loss(out, target)
        return cross_entropy(out, np.asarray(labels))

    return loss


def predict_scores(model: _SearchNet, x) -> np.ndarray:
    from .tensor import no_grad

    with no_grad():
        out = model(x if isinstance(x, Tensor) else Tensor(x))
    return model.scores(out)


# ---------------------------------------------------------------------------
# bi-level optimization
# ---------------------------------------------------------------------------

@dataclass
class SupernetState:
    """A model exposing ``weight_parameters()``/``arch_parameters()`` plus its loss."""

    model: Any
    loss_fn: Callable[[Any, Any], Tensor]
    space: SearchSpace | None = None
    weight_optimizer: Any = None
    arch_optimizer: Any = None

    @property
    def weights(self) -> list[Parameter]:
        return list(self.model.weight_parameters())

    @property
    def arch(self) -> list[Parameter]:
        return list(self.model.arch_parameters())


@contextmanager
def _frozen(params):
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


def loss_and_grads(state: SupernetState, batch, params, others) -> tuple[float, list[np.ndarray]]:
    """Loss value and gradients w.r.t. ``params`` with ``others`` held constant."""
    for p in params:
        p.grad = None
    with _frozen(others):
        loss = state.loss_fn(state.model, batch)
        value = float(loss.item())
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value}")
        loss.backward()
    return value, [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def _apply(params, grads, lr, optimizer):
    if optimizer is None:
        for p, g in zip(params, grads):
            p.data = (p.data - lr * g).astype(p.dtype)
        return
    for p, g in zip(params, grads):
        p.grad = g
    optimizer.lr = lr
    optimizer.step()


def inner_weight_step(state: SupernetState, batch, lr: float) -> float:
    """``phi <- phi - lr * grad_phi L(batch; phi, alpha)``; alpha is untouched. Returns the loss."""
    loss, grads = loss_and_grads(state, batch, state.weights, state.arch)
    _apply(state.weights, grads, lr, state.weight_optimizer)
    for p in state.weights:
        p.grad = None
    return loss


def arch_step(state: SupernetState, batch, lr: float, mode: str = "first-order", support=None,
              inner_lr: float = 0.0) -> float:
    """Update alpha on the query ``batch``.

    ``unrolled`` differentiates through one virtual weight step of size ``inner_lr`` on ``support``
    using the finite-difference Hessian-vector product; weights are restored afterwards.
    """
    weights, arch = state.weights, state.arch
    if mode == "first-order" or inner_lr == 0.0:
        loss, grads = loss_and_grads(state, batch, arch, weights)
    elif mode == "unrolled":
        if support is None:
            raise ConfigError("unrolled architecture step needs a support batch")
        saved = [p.data.copy() for p in weights]
        _, g_s = loss_and_grads(state, support, weights, arch)
        for p, g in zip(weights, g_s):
            p.data = (p.data - inner_lr * g).astype(p.dtype)
        loss, both = loss_and_grads(state, batch, arch + weights, [])
        g_alpha, g_w = both[:len(arch)], both[len(arch):]
        norm = math.sqrt(sum(float((g * g).sum()) for g in g_w))
        eps = 0.01 / norm if norm > 0 else 0.0
        hess = [np.zeros_like(g) for g in g_alpha]
        if eps > 0:
            for sign in (1.0, -1.0):
                for p, s, g in zip(weights, saved, g_w):
                    p.data = (s + sign * eps * g).astype(p.dtype)
                _, ga = loss_and_grads(state, support, arch, weights)
                hess = [h + sign * a for h, a in zip(hess, ga)]
            hess = [h / (2 * eps) for h in hess]
        for p, s in zip(weights, saved):
            p.data = s
        grads = [ga - inner_lr * h for ga, h in zip(g_alpha, hess)]
    else:
        raise ConfigError(f"unknown architecture-step mode {mode!r}")
    _apply(arch, grads, lr, state.arch_optimizer)
    for p in arch + weights:
        p.grad = None
    return loss


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

def _softmax_rows(a: np.ndarray) -> np.ndarray:
    z = np.exp(a - a.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def discretize(source, space: SearchSpace, meta: dict | None = None) -> Genotype:
    """Keep the best non-``none`` op per edge and the M strongest edges per node.

    ``source`` is a supernet or a mapping ``kind -> alpha array``. Ties go to the lower index.
    """
    alphas = source.alphas() if hasattr(source, "alphas") else source
    ops = list(space.ops)
    allowed = np.array([op != "none" for op in ops])
    cells = []
    for kind in space.kinds:
        a = np.asarray(alphas[kind.name], dtype=np.float64)
        edges = kind.edges()
        if a.shape != (len(edges), len(ops)):
            raise ShapeError(f"alpha for {kind.name} has shape {a.shape}")
        # argmax on alpha itself is exactly shift invariant
        masked = np.where(allowed, a, -np.inf)
        best = masked.argmax(axis=1)
        beta = _softmax_rows(a)
        strength = beta[np.arange(len(edges)), best]
        pos = {e: i for i, e in enumerate(edges)}
        kept = []
        for node in kind.intermediates:
            idx = [pos[(node, src)] for src in kind.incoming(node)]
            order = sorted(idx, key=lambda i: (-strength[i], i))
            for i in sorted(order[:space.keep_edges]):
                kept.append(Edge(node, edges[i][1], ops[best[i]]))
        cells.append(GenoCell(kind.name, kept))
    return Genotype(space.identifier, cells, dict(meta or {}))
