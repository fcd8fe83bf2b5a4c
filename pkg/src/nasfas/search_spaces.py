"""Declarative descriptors for the baseline and FAS search spaces."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from itertools import combinations

import numpy as np

from .genotype import Edge, GenoCell, Genotype
from .ops import OPS
from .tensor import ConfigError

__all__ = [
    "CellKind",
    "SearchSpace",
    "BASELINE_VANILLA_OPS",
    "BASELINE_CD_OPS",
    "FAS_VANILLA_OPS",
    "FAS_CD_OPS",
    "ATTENTION_KERNELS",
    "baseline_space",
    "fas_space",
    "space_from_id",
    "space_size",
    "random_sample",
    "validate_genotype",
]

BASELINE_VANILLA_OPS = ("none", "skip_connect", "max_pool_3x3", "avg_pool_3x3",
                        "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3")
BASELINE_CD_OPS = ("none", "skip_connect", "max_pool_3x3", "CDP_0.7_3x3",
                   "sep_conv_3x3", "sep_conv_5x5", "CDC_0.7_3x3")
FAS_VANILLA_OPS = ("none", "skip_connect", "max_pool_3x3", "conv",
                   "conv_2_2", "conv_2_4", "conv_2_6", "conv_2_8")
FAS_CD_OPS = ("none", "skip_connect", "max_pool_3x3", "CDC",
              "CDC_2_2", "CDC_2_4", "CDC_2_6", "CDC_2_8")

# low, mid, high
ATTENTION_KERNELS = (7, 5, 3)

BASELINE_LAYOUT = ("normal", "normal", "reduction") * 3


@dataclass(frozen=True)
class CellKind:
    """One architecture-bearing cell type.

    Nodes ``0 .. n_inputs-1`` are inputs, the next ``n_intermediate`` are searched.
    ``counted_edges`` overrides the edge count used for cardinality when set.
    """

    name: str
    n_inputs: int
    n_intermediate: int = 4
    chain: bool = False
    reduction: bool = False
    counted_edges: int | None = None

    @property
    def intermediates(self) -> range:
        return range(self.n_inputs, self.n_inputs + self.n_intermediate)

    def incoming(self, node: int) -> list[int]:
        if node not in self.intermediates:
            raise ConfigError(f"node {node} is not an intermediate node of {self.name}")
        if self.chain:
            return [node - 1]
        return list(range(node))

    def edges(self) -> list[tuple[int, int]]:
        """``(to, from)`` pairs in canonical order."""
        return [(j, i) for j in self.intermediates for i in self.incoming(j)]

    def edge_index(self, to: int, src: int) -> int:
        return self.edges().index((to, src))


@dataclass(frozen=True)
class SearchSpace:
    name: str
    variant: str
    ops: tuple[str, ...]
    kinds: tuple[CellKind, ...]
    layout: tuple[str, ...]
    head: str
    keep_edges: int
    pooling: str | None = None
    attention: bool = False
    input_size: int = 64
    channels: int = 8

    def kind(self, name: str) -> CellKind:
        for k in self.kinds:
            if k.name == name:
                return k
        raise KeyError(name)

    @property
    def identifier(self) -> str:
        if self.name == "baseline":
            return f"baseline-{self.variant}-{self.head}"
        return f"fas-{self.variant}-{self.pooling}-{'att' if self.attention else 'noatt'}"

    @property
    def output_size(self) -> int:
        return self.input_size // 8

    def with_(self, **changes) -> "SearchSpace":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["identifier"] = self.identifier
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _check(value, allowed, what):
    if value not in allowed:
        raise ConfigError(f"{what} must be one of {allowed}, got {value!r}")


def baseline_space(variant: str = "vanilla", head: str = "deeppixel", input_size: int = 64,
                   channels: int = 8) -> SearchSpace:
    """Nine cells (6 normal, 3 reduction), 7 candidate ops per edge, M = 2."""
    _check(variant, ("vanilla", "cd"), "variant")
    _check(head, ("cross-entropy", "deeppixel"), "head")
    if input_size % 64:
        raise ConfigError(f"baseline space needs an input size divisible by 64, got {input_size}")
    ops = BASELINE_VANILLA_OPS if variant == "vanilla" else BASELINE_CD_OPS
    # node j (1-based) is charged j choices: (7^(1+2+3+4))^2 overall
    counted = sum(range(1, 5))
    kinds = (CellKind("normal", 2, counted_edges=counted),
             CellKind("reduction", 2, reduction=True, counted_edges=counted))
    return SearchSpace("baseline", variant, ops, kinds, BASELINE_LAYOUT, head, keep_edges=2,
                       input_size=input_size, channels=channels)


def fas_space(variant: str = "cd", pooling: str = "max", attention: bool = False, input_size: int = 64,
              channels: int = 8) -> SearchSpace:
    """Low/mid/high chain cells, 8 candidate ops per edge, M = 1, depth head."""
    _check(variant, ("vanilla", "cd"), "variant")
    _check(pooling, ("max", "cdp"), "pooling")
    if input_size % 8:
        raise ConfigError(f"FAS space needs an input size divisible by 8, got {input_size}")
    ops = FAS_VANILLA_OPS if variant == "vanilla" else FAS_CD_OPS
    kinds = tuple(CellKind(name, 1, chain=True) for name in ("low", "mid", "high"))
    return SearchSpace("fas", variant, ops, kinds, ("low", "mid", "high"), "depth", keep_edges=1,
                       pooling=pooling, attention=bool(attention), input_size=input_size, channels=channels)


def space_from_id(identifier: str, input_size: int = 64, channels: int = 8) -> SearchSpace:
    parts = identifier.split("-")
    try:
        if parts[0] == "baseline":
            return baseline_space(parts[1], "-".join(parts[2:]), input_size, channels)
        if parts[0] == "fas":
            return fas_space(parts[1], parts[2], parts[3] == "att", input_size, channels)
    except IndexError:
        pass
    raise ConfigError(f"unrecognized search-space identifier {identifier!r}")


def space_size(space: SearchSpace) -> int:
    """Number of architectures: product over cell kinds of |ops| ** searched edges."""
    total = 1
    for kind in space.kinds:
        n_edges = kind.counted_edges if kind.counted_edges is not None else len(kind.edges())
        total *= len(space.ops) ** n_edges
    return total


def random_sample(space: SearchSpace, rng: np.random.Generator, meta: dict | None = None) -> Genotype:
    """Uniform non-``none`` op per kept edge and a uniform M-subset of incoming edges per node."""
    choices = [op for op in space.ops if op != "none"]
    cells = []
    for kind in space.kinds:
        edges = []
        for node in kind.intermediates:
            preds = kind.incoming(node)
            m = min(space.keep_edges, len(preds))
            picked = sorted(rng.choice(len(preds), size=m, replace=False).tolist())
            for p in picked:
                edges.append(Edge(node, preds[p], choices[int(rng.integers(len(choices)))]))
        cells.append(GenoCell(kind.name, edges))
    return Genotype(space.identifier, cells, dict(meta or {"sampler": "random"}))


def validate_genotype(genotype: Genotype, space: SearchSpace) -> None:
    """Raise :class:`ConfigError` unless the genotype obeys the space's topology."""
    if genotype.space != space.identifier:
        raise ConfigError(f"genotype space {genotype.space!r} != {space.identifier!r}")
    if sorted(c.kind for c in genotype.cells) != sorted(k.name for k in space.kinds):
        raise ConfigError("genotype cell kinds do not match the space")
    for kind in space.kinds:
        cell = genotype.cell(kind.name)
        for node in kind.intermediates:
            incoming = [e for e in cell.edges if e.to == node]
            want = min(space.keep_edges, len(kind.incoming(node)))
            if len(incoming) != want:
                raise ConfigError(f"{kind.name} node {node} keeps {len(incoming)} edges, expected {want}")
            if len({e.src for e in incoming}) != len(incoming):
                raise ConfigError(f"{kind.name} node {node} has duplicate edges")
            for e in incoming:
                if e.src not in kind.incoming(node):
                    raise ConfigError(f"{kind.name}: edge {e.src}->{node} is not in the cell DAG")
                if e.op not in space.ops or e.op == "none":
                    raise ConfigError(f"{kind.name}: op {e.op!r} not selectable in this space")
        if any(e.to not in kind.intermediates for e in cell.edges):
            raise ConfigError(f"{kind.name}: edge into a non-intermediate node")
    for op in space.ops:
        if op not in OPS:
            raise ConfigError(f"space references unknown op {op!r}")


def enumerate_genotypes(space: SearchSpace):
    """Yield every op assignment over all edges (tiny spaces only)."""
    from itertools import product

    per_kind = []
    for kind in space.kinds:
        per_kind.append(list(product(space.ops, repeat=len(kind.edges()))))
    yield from product(*per_kind)


def node_subsets(kind: CellKind, m: int):
    return {node: list(combinations(kind.incoming(node), min(m, len(kind.incoming(node)))))
            for node in kind.intermediates}
