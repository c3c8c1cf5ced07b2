"""MATPOWER case parsing and the in-memory power network model.

Parsed quantities are stored in per-unit on the case ``baseMVA``:
loads, shunts and generator limits are divided by the base, generator cost
coefficients are rescaled so that ``cost = c1 * pg_pu + c2 * pg_pu**2``, and
branch impedances are inverted into series admittances.

Transformer tap ratio and phase-shift columns are kept on :class:`Branch` but
the formulations in :mod:`icnnopf.opf` do not use them.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "Branch",
    "Bus",
    "CaseParseError",
    "Generator",
    "PowerNetwork",
    "Violation",
    "bundled_case",
    "bundled_case_path",
    "load_case",
    "parse_case",
    "validate",
]

# bus types in MATPOWER
PQ, PV, REF, ISOLATED = 1, 2, 3, 4

_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}


class CaseParseError(ValueError):
    """Raised for malformed case text; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    type: int
    pd: float
    qd: float
    gs: float
    bs: float
    vmin: float
    vmax: float
    base_kv: float = 0.0

    @property
    def shunt(self) -> complex:
        return complex(self.gs, self.bs)


@dataclass(frozen=True)
class Branch:
    f_bus: int
    t_bus: int
    r: float
    x: float
    charging: float
    rate: float  # p.u.; math.inf when the file gives 0
    tap: float = 0.0
    shift: float = 0.0
    angmin: float = -math.inf  # rad
    angmax: float = math.inf

    @property
    def y(self) -> complex:
        """Series admittance ``g + j b``."""
        z = complex(self.r, self.x)
        if z == 0:
            return complex(math.inf, math.inf)
        return 1.0 / z

    @property
    def g(self) -> float:
        return self.y.real

    @property
    def b(self) -> float:
        return self.y.imag

    @property
    def y_shunt(self) -> complex:
        """Shunt admittance at each end (half the line charging)."""
        return complex(0.0, self.charging / 2.0)


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost: float  # linear coefficient, currency per p.u.
    cost_quadratic: float = 0.0
    cost_constant: float = 0.0


@dataclass(frozen=True)
class PowerNetwork:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = ""

    @property
    def slack_bus(self) -> int:
        refs = [b.id for b in self.buses if b.type == REF]
        if len(refs) != 1:
            raise ValueError(f"expected exactly one slack bus, found {len(refs)}")
        return refs[0]

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def pd(self) -> np.ndarray:
        return np.array([b.pd for b in self.buses], dtype=float)

    @property
    def qd(self) -> np.ndarray:
        return np.array([b.qd for b in self.buses], dtype=float)

    @property
    def loads(self) -> np.ndarray:
        """Complex per-bus demand ``pd + j qd``."""
        return self.pd + 1j * self.qd


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    element: str = ""


# --------------------------------------------------------------------------
# parsing


_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == "'":
            quoted = not quoted
        elif ch == "%" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def _parse_row(chunk: str, lineno: int) -> list[float]:
    vals = []
    for tok in re.split(r"[\s,]+", chunk.strip()):
        if not tok:
            continue
        try:
            vals.append(float(tok))
        except ValueError:
            raise CaseParseError(f"non-numeric entry {tok!r}", lineno) from None
    return vals


def _scan(text: str) -> tuple[dict[str, str], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, str] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if current is None:
            m = _ASSIGN.match(line)
            if not m:
                continue
            name, rhs = m.group(1), m.group(2).strip()
            if rhs.startswith("["):
                current = name
                matrices[name] = []
                line = rhs[1:]
            elif rhs.startswith("{"):
                continue
            else:
                scalars[name] = rhs.rstrip(";").strip()
                continue
        closed = "]" in line
        body = line.split("]", 1)[0] if closed else line
        for chunk in body.split(";"):
            if chunk.strip():
                matrices[current].append((lineno, _parse_row(chunk, lineno)))
        if closed:
            current = None
    if current is not None:
        raise CaseParseError(f"matrix mpc.{current} is not terminated")
    return scalars, matrices


def _matrix(matrices, name: str) -> list[tuple[int, list[float]]]:
    if name not in matrices:
        raise CaseParseError(f"missing required matrix mpc.{name}")
    rows = matrices[name]
    width = _MIN_COLS[name]
    for lineno, row in rows:
        if len(row) < width:
            raise CaseParseError(
                f"mpc.{name} row has {len(row)} columns, expected at least {width}", lineno
            )
    return rows


def _angle_limit(deg: float, sign: float) -> float:
    if abs(deg) >= 360.0:
        return sign * math.inf
    return math.radians(deg)


def parse_case(text: str, name: str = "") -> PowerNetwork:
    """Parse MATPOWER case text into a per-unit :class:`PowerNetwork`.

    Out-of-service generators and branches are dropped. Only polynomial
    gencost rows are supported; a nonzero quadratic term is kept on the
    generator but logged, since the OPF objectives here are linear.
    """
    if not text or not text.strip():
        raise CaseParseError("empty case text")
    scalars, matrices = _scan(text)
    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    try:
        base = float(scalars["baseMVA"])
    except ValueError:
        raise CaseParseError(f"invalid baseMVA {scalars['baseMVA']!r}") from None
    if not base > 0:
        raise CaseParseError(f"baseMVA must be positive, got {base}")
    if not name:
        m = re.search(r"function\s+\w+\s*=\s*(\w+)", text)
        name = m.group(1) if m else ""

    buses = tuple(
        Bus(
            id=int(r[0]),
            type=int(r[1]),
            pd=r[2] / base,
            qd=r[3] / base,
            gs=r[4] / base,
            bs=r[5] / base,
            vmax=r[11],
            vmin=r[12],
            base_kv=r[9],
        )
        for _, r in _matrix(matrices, "bus")
    )

    gen_rows = _matrix(matrices, "gen")
    cost_rows = _matrix(matrices, "gencost")
    if len(cost_rows) < len(gen_rows):
        raise CaseParseError(
            f"mpc.gencost has {len(cost_rows)} rows for {len(gen_rows)} generators"
        )
    generators = []
    quadratic: list[int] = []
    for (lineno, g), (clineno, c) in zip(gen_rows, cost_rows):
        if g[7] <= 0:
            continue
        if int(c[0]) != 2:
            raise CaseParseError("only polynomial gencost (model 2) is supported", clineno)
        n = int(c[3])
        coeffs = c[4 : 4 + n]
        if len(coeffs) != n:
            raise CaseParseError(f"gencost declares {n} coefficients, found {len(coeffs)}", clineno)
        c0 = coeffs[-1] if n >= 1 else 0.0
        c1 = coeffs[-2] if n >= 2 else 0.0
        c2 = coeffs[-3] if n >= 3 else 0.0
        if n > 3 and any(coeffs[: n - 3]):
            raise CaseParseError("gencost polynomials above degree 2 are not supported", clineno)
        if c2 != 0.0:
            quadratic.append(int(g[0]))
        generators.append(
            Generator(
                bus=int(g[0]),
                pmin=g[9] / base,
                pmax=g[8] / base,
                qmin=g[4] / base,
                qmax=g[3] / base,
                cost=c1 * base,
                cost_quadratic=c2 * base * base,
                cost_constant=c0,
            )
        )

    if quadratic:
        log.warning(
            "%d generator(s) have quadratic costs (first at bus %d); linear OPF objectives ignore them",
            len(quadratic),
            quadratic[0],
        )

    branches = []
    for lineno, r in _matrix(matrices, "branch"):
        if r[10] <= 0:
            continue
        angmin = r[11] if len(r) > 11 else -360.0
        angmax = r[12] if len(r) > 12 else 360.0
        branches.append(
            Branch(
                f_bus=int(r[0]),
                t_bus=int(r[1]),
                r=r[2],
                x=r[3],
                charging=r[4],
                rate=r[5] / base if r[5] > 0 else math.inf,
                tap=r[8],
                shift=math.radians(r[9]),
                angmin=_angle_limit(angmin, -1.0),
                angmax=_angle_limit(angmax, 1.0),
            )
        )

    return PowerNetwork(
        base_mva=base,
        buses=buses,
        branches=tuple(branches),
        generators=tuple(generators),
        name=name,
    )


def load_case(path: str | Path) -> PowerNetwork:
    path = Path(path)
    return parse_case(path.read_text(encoding="utf-8"), name=path.stem)


def bundled_case_path(name: str) -> Path:
    """Path of a case shipped with the package (``case2``, ``case5``, ``case14``, ``case300``)."""
    ref = resources.files("icnnopf") / "cases" / f"{name}.m"
    path = Path(str(ref))
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path


def bundled_case(name: str) -> PowerNetwork:
    return load_case(bundled_case_path(name))


# --------------------------------------------------------------------------
# validation


def validate(net: PowerNetwork) -> list[Violation]:
    """Return every invariant violation found in ``net`` (empty when valid)."""
    out: list[Violation] = []
    if not net.base_mva > 0:
        out.append(Violation("base-mva", f"base_mva must be positive, got {net.base_mva}"))

    ids = [b.id for b in net.buses]
    known = set(ids)
    if len(known) != len(ids):
        out.append(Violation("duplicate-bus", "bus identifiers are not unique"))
    n_ref = sum(b.type == REF for b in net.buses)
    if n_ref != 1:
        out.append(Violation("slack-count", f"expected exactly one slack bus, found {n_ref}"))

    for b in net.buses:
        if not (0 < b.vmin <= b.vmax):
            out.append(
                Violation("voltage-bounds", f"need 0 < vmin <= vmax, got [{b.vmin}, {b.vmax}]", f"bus {b.id}")
            )

    for k, br in enumerate(net.branches):
        tag = f"branch {k} ({br.f_bus}-{br.t_bus})"
        for end in (br.f_bus, br.t_bus):
            if end not in known:
                out.append(Violation("dangling-branch", f"references unknown bus {end}", tag))
        if br.f_bus == br.t_bus:
            out.append(Violation("self-loop", "from-bus equals to-bus", tag))
        if br.rate < 0:
            out.append(Violation("thermal-limit", f"negative thermal limit {br.rate}", tag))
        if br.r == 0 and br.x == 0:
            out.append(Violation("zero-impedance", "r = x = 0 gives infinite admittance", tag))
        if br.angmin > br.angmax:
            out.append(Violation("angle-bounds", "angmin > angmax", tag))

    for k, g in enumerate(net.generators):
        tag = f"generator {k} (bus {g.bus})"
        if g.bus not in known:
            out.append(Violation("dangling-generator", f"references unknown bus {g.bus}", tag))
        if g.pmin > g.pmax:
            out.append(Violation("pg-bounds", f"pmin {g.pmin} > pmax {g.pmax}", tag))
        if g.qmin > g.qmax:
            out.append(Violation("qg-bounds", f"qmin {g.qmin} > qmax {g.qmax}", tag))
    return out
