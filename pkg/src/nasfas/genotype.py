"""Discrete architectures and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Edge", "GenoCell", "Genotype", "save_genotype", "load_genotype"]


@dataclass(frozen=True, order=True)
class Edge:
    to: int
    src: int
    op: str

    def to_dict(self) -> dict:
        return {"to": self.to, "from": self.src, "op": self.op}


@dataclass
class GenoCell:
    kind: str
    edges: list[Edge]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "edges": [e.to_dict() for e in self.edges]}


@dataclass
class Genotype:
    space: str
    cells: list[GenoCell]
    meta: dict = field(default_factory=dict)

    def cell(self, kind: str) -> GenoCell:
        for c in self.cells:
            if c.kind == kind:
                return c
        raise KeyError(f"genotype has no cell of kind {kind!r}")

    def to_dict(self) -> dict:
        return {"space": self.space, "cells": [c.to_dict() for c in self.cells], "meta": dict(self.meta)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        cells = [GenoCell(c["kind"], [Edge(int(e["to"]), int(e["from"]), str(e["op"])) for e in c["edges"]])
                 for c in d["cells"]]
        return cls(d["space"], cells, dict(d.get("meta", {})))

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        return cls.from_dict(json.loads(text))

    def ops(self) -> list[str]:
        return [e.op for c in self.cells for e in c.edges]


def save_genotype(path, genotype: Genotype) -> None:
    Path(path).write_text(genotype.to_json())


def load_genotype(path) -> Genotype:
    return Genotype.from_json(Path(path).read_text())
