"""AC-OPF in polar voltage coordinates, as an exportable description.

Each branch contributes two arcs: the forward arc ``(k, from, to)`` and the
reverse arc ``(k, to, from)``. Arc flows are listed forward arcs first.
Constraint ``indices`` are positions into the variable blocks named by the key.
"""

from __future__ import annotations

import math

import numpy as np

from ..grid import Branch, PowerNetwork
from .formulation import Constraint, Formulation, VariableBlock, finite_or_none


def arcs(net: PowerNetwork) -> list[tuple[int, int, int]]:
    """``(branch, from_bus, to_bus)`` for every forward then every reverse arc."""
    fwd = [(k, br.f_bus, br.t_bus) for k, br in enumerate(net.branches)]
    rev = [(k, br.t_bus, br.f_bus) for k, br in enumerate(net.branches)]
    return fwd + rev


def bus_incidence(net: PowerNetwork) -> tuple[list[list[int]], list[list[int]]]:
    """Per bus position: generator positions, and positions of arcs leaving it."""
    idx = net.bus_index
    gens = [[] for _ in net.buses]
    for g, gen in enumerate(net.generators):
        gens[idx[gen.bus]].append(g)
    out = [[] for _ in net.buses]
    for a, (_, f, _t) in enumerate(arcs(net)):
        out[idx[f]].append(a)
    return gens, out


def branch_power_flows(branch: Branch, v_from: complex, v_to: complex) -> tuple[complex, complex]:
    """Complex power entering the branch at each end, from nodal voltages.

    ``S_ft = (Y + Yc)^* |V_f|^2 - Y^* V_f V_t^*`` and symmetrically for ``S_tf``.
    """
    y, yc = branch.y, branch.y_shunt
    s_ft = (y + yc).conjugate() * abs(v_from) ** 2 - y.conjugate() * v_from * v_to.conjugate()
    s_tf = (y + yc).conjugate() * abs(v_to) ** 2 - y.conjugate() * v_from.conjugate() * v_to
    return s_ft, s_tf


def check_loads(net: PowerNetwork, *loads) -> list[np.ndarray]:
    out = []
    for v in loads:
        v = np.asarray(v, dtype=float).ravel()
        if v.shape != (net.n_bus,):
            raise ValueError(f"loads must have one entry per bus ({net.n_bus}), got {v.shape}")
        out.append(v)
    return out


def generator_blocks(net: PowerNetwork) -> list[VariableBlock]:
    ng = len(net.generators)
    return [
        VariableBlock("pg", list(range(ng)), [g.pmin for g in net.generators], [g.pmax for g in net.generators]),
        VariableBlock("qg", list(range(ng)), [g.qmin for g in net.generators], [g.qmax for g in net.generators]),
    ]


def flow_blocks(net: PowerNetwork) -> list[VariableBlock]:
    keys = [list(a) for a in arcs(net)]
    rates = [finite_or_none(net.branches[k].rate) for k, _, _ in arcs(net)]
    lower = [None if r is None else -r for r in rates]
    return [VariableBlock("pf", keys, lower, rates), VariableBlock("qf", keys, lower, list(rates))]


def linear_objective(net: PowerNetwork) -> dict:
    return {"sense": "min", "variable": "pg", "coefficients": [g.cost for g in net.generators], "constant": 0.0}


def thermal_constraints(net: PowerNetwork, kind: str) -> list[Constraint]:
    """One ``pf^2 + qf^2 <= rate^2`` per arc; ``rate`` is None when unlimited."""
    out = []
    for a, (k, f, t) in enumerate(arcs(net)):
        rate = finite_or_none(net.branches[k].rate)
        out.append(Constraint(kind, {"branch": k, "pf": a, "qf": a}, {"rate": rate}))
    return out


def build_ac(net: PowerNetwork, pd, qd) -> Formulation:
    pd, qd = check_loads(net, pd, qd)
    idx = net.bus_index
    ne = len(net.branches)
    bus_ids = [b.id for b in net.buses]
    variables = [
        VariableBlock("va", bus_ids, [None] * len(bus_ids), [None] * len(bus_ids)),
        VariableBlock("vm", bus_ids, [b.vmin for b in net.buses], [b.vmax for b in net.buses]),
        *generator_blocks(net),
        *flow_blocks(net),
    ]

    gens, out = bus_incidence(net)
    cons = []
    for i, bus in enumerate(net.buses):
        cons.append(
            Constraint(
                "balance",
                {"bus": bus.id, "vm": i, "pg": gens[i], "qg": gens[i], "pf": out[i], "qf": out[i]},
                {"pd": float(pd[i]), "qd": float(qd[i]), "gs": bus.gs, "bs": bus.bs},
            )
        )
    for a, (k, f, t) in enumerate(arcs(net)):
        br = net.branches[k]
        cons.append(
            Constraint(
                "ohm",
                {"branch": k, "direction": "forward" if a < ne else "reverse", "pf": a, "qf": a,
                 "vm": [idx[f], idx[t]], "va": [idx[f], idx[t]]},
                {"g": br.g, "b": br.b, "g_shunt": br.y_shunt.real, "b_shunt": br.y_shunt.imag},
            )
        )
    cons += thermal_constraints(net, "thermal")
    cons.append(Constraint("reference-angle", {"bus": net.slack_bus, "va": idx[net.slack_bus]}, {"value": 0.0}))
    for k, br in enumerate(net.branches):
        if math.isfinite(br.angmin) or math.isfinite(br.angmax):
            cons.append(
                Constraint(
                    "angle-difference",
                    {"branch": k, "va": [idx[br.f_bus], idx[br.t_bus]]},
                    {"min": finite_or_none(br.angmin), "max": finite_or_none(br.angmax)},
                )
            )
    return Formulation("ac", variables, cons, linear_objective(net))
