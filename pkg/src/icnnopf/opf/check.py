"""Evaluate constraint residuals of an AC or SOC description at a given point.

Works only from the description itself (not the network), so it also checks
that exported files carry every coefficient they need.
"""

from __future__ import annotations

import cmath

import numpy as np

from .formulation import Formulation


def _excess(value: float, lower, upper) -> float:
    lo = 0.0 if lower is None else max(lower - value, 0.0)
    hi = 0.0 if upper is None else max(value - upper, 0.0)
    return max(lo, hi)


def _ac(c, x) -> float:
    ix, k = c.indices, c.coefficients
    if c.kind == "balance":
        vm = x["vm"][ix["vm"]]
        s_gen = sum(x["pg"][g] + 1j * x["qg"][g] for g in ix["pg"])
        s_flow = sum(x["pf"][a] + 1j * x["qf"][a] for a in ix["pf"])
        shunt = complex(k["gs"], -k["bs"]) * vm**2
        return abs(s_gen - complex(k["pd"], k["qd"]) - shunt - s_flow)
    if c.kind == "ohm":
        f, t = ix["vm"]
        vf = cmath.rect(x["vm"][f], x["va"][f])
        vt = cmath.rect(x["vm"][t], x["va"][t])
        y = complex(k["g"], k["b"])
        yc = complex(k["g_shunt"], k["b_shunt"])
        s = (y + yc).conjugate() * abs(vf) ** 2 - y.conjugate() * vf * vt.conjugate()
        return abs(complex(x["pf"][ix["pf"]], x["qf"][ix["qf"]]) - s)
    if c.kind == "reference-angle":
        return abs(x["va"][ix["va"]] - k["value"])
    if c.kind == "angle-difference":
        f, t = ix["va"]
        return _excess(x["va"][f] - x["va"][t], k["min"], k["max"])
    raise ValueError(f"unknown ac constraint kind {c.kind!r}")


def _soc(c, x) -> float:
    ix, k = c.indices, c.coefficients
    if c.kind == "balance-active":
        lhs = sum(x["pg"][g] for g in ix["pg"]) - k["pd"] - k["gs"] * x["w"][ix["w"]]
        return abs(lhs - sum(x["pf"][a] for a in ix["pf"]))
    if c.kind == "balance-reactive":
        lhs = sum(x["qg"][g] for g in ix["qg"]) - k["qd"] + k["bs"] * x["w"][ix["w"]]
        return abs(lhs - sum(x["qf"][a] for a in ix["qf"]))
    if c.kind == "ohm":
        w, wr, wi = x["w"][ix["w"]], x["wr"][ix["wr"]], x["wi"][ix["wi"]]
        p = k["p_w"] * w + k["p_r"] * wr + k["p_i"] * wi
        q = k["q_w"] * w + k["q_r"] * wr + k["q_i"] * wi
        return max(abs(x["pf"][ix["pf"]] - p), abs(x["qf"][ix["qf"]] - q))
    if c.kind == "jabr-soc":
        f, t = ix["w"]
        return max(x["wr"][ix["wr"]] ** 2 + x["wi"][ix["wi"]] ** 2 - x["w"][f] * x["w"][t], 0.0)
    if c.kind == "angle-difference":
        wr, wi = x["wr"][ix["wr"]], x["wi"][ix["wi"]]
        lo = None if k["tan_min"] is None else k["tan_min"] * wr
        hi = None if k["tan_max"] is None else k["tan_max"] * wr
        return _excess(-wi, lo, hi)
    raise ValueError(f"unknown soc constraint kind {c.kind!r}")


def residuals(f: Formulation, point: dict[str, np.ndarray]) -> dict[str, float]:
    """Largest violation per constraint kind, plus ``"bounds"`` for variable bounds.

    Thermal limits are checked as ``|S| <= rate``, skipped when rate is None.
    """
    x = {name: np.asarray(v, dtype=float) for name, v in point.items()}
    out: dict[str, float] = {"bounds": 0.0}
    for block in f.variables:
        vals = x[block.name]
        if vals.shape != (block.size,):
            raise ValueError(f"point for {block.name!r} must have {block.size} entries")
        for v, lo, hi in zip(vals, block.lower, block.upper):
            out["bounds"] = max(out["bounds"], _excess(v, lo, hi))
    for c in f.constraints:
        if c.kind in ("thermal", "thermal-soc"):
            rate = c.coefficients["rate"]
            mag = float(np.hypot(x["pf"][c.indices["pf"]], x["qf"][c.indices["qf"]]))
            r = 0.0 if rate is None else max(mag - rate, 0.0)
        elif f.formulation == "ac":
            r = _ac(c, x)
        elif f.formulation == "soc":
            r = _soc(c, x)
        else:
            raise ValueError("residuals are defined for ac and soc descriptions")
        out[c.kind] = max(out.get(c.kind, 0.0), float(r))
    return out


def objective_value(f: Formulation, point: dict[str, np.ndarray]) -> float:
    obj = f.objective
    return float(np.dot(obj["coefficients"], np.asarray(point[obj["variable"]], dtype=float)) + obj["constant"])
