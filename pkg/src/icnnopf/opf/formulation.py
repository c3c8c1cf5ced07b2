"""Portable description of an OPF formulation and its JSON file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .. import _jsonio

SCHEMA_VERSION = 1
FORMULATIONS = ("dc", "soc", "ac")


def finite_or_none(v: float) -> float | None:
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class VariableBlock:
    name: str
    keys: list[Any]
    lower: list[float | None]
    upper: list[float | None]

    def __post_init__(self):
        if not (len(self.keys) == len(self.lower) == len(self.upper)):
            raise ValueError(f"variable block {self.name!r} has inconsistent lengths")

    @property
    def size(self) -> int:
        return len(self.keys)

    def to_dict(self) -> dict:
        return {"name": self.name, "keys": self.keys, "lower": self.lower, "upper": self.upper}


@dataclass
class Constraint:
    kind: str
    indices: dict[str, Any]
    coefficients: dict[str, Any]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "indices": self.indices, "coefficients": self.coefficients}


@dataclass
class Formulation:
    formulation: str
    variables: list[VariableBlock]
    constraints: list[Constraint]
    objective: dict[str, Any]

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.formulation!r}")

    def variable(self, name: str) -> VariableBlock:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def count(self, kind: str) -> int:
        return sum(c.kind == kind for c in self.constraints)

    def of_kind(self, kind: str) -> list[Constraint]:
        return [c for c in self.constraints if c.kind == kind]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "formulation": self.formulation,
            "variables": [v.to_dict() for v in self.variables],
            "constraints": [c.to_dict() for c in self.constraints],
            "objective": self.objective,
        }


def _plain(obj):
    """Convert numpy scalars/arrays into plain Python values."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps_formulation(f: Formulation) -> str:
    return _jsonio.dumps(_plain(f.to_dict())) + "\n"


def export_formulation(f: Formulation, path: str | Path) -> Path:
    """Write ``f`` to ``path``; identical descriptions give identical bytes."""
    path = Path(path)
    path.write_text(dumps_formulation(f), encoding="utf-8")
    return path


def loads_formulation(text: str) -> Formulation:
    d = json.loads(text)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported formulation schema_version {d.get('schema_version')!r}")
    return Formulation(
        formulation=d["formulation"],
        variables=[VariableBlock(**v) for v in d["variables"]],
        constraints=[Constraint(**c) for c in d["constraints"]],
        objective=d["objective"],
    )


def load_formulation(path: str | Path) -> Formulation:
    return loads_formulation(Path(path).read_text(encoding="utf-8"))
