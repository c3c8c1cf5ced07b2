"""Second-order-cone relaxation of AC-OPF in the lifted ``(w, wr, wi)`` space.

With ``w_i = v_i^2``, ``wr = v_i v_j cos(va_j - va_i)`` and
``wi = v_i v_j sin(va_j - va_i)`` each branch flow is linear in the lifted
variables, and the product identity ``wr^2 + wi^2 = w_i w_j`` is relaxed to a
rotated cone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..grid import Branch, PowerNetwork
from .ac import arcs, bus_incidence, check_loads, flow_blocks, generator_blocks, linear_objective, thermal_constraints
from .formulation import Constraint, Formulation, VariableBlock


@dataclass(frozen=True)
class FlowCoefficients:
    """Flow at one end of a branch: ``p = p_w*w + p_r*wr + p_i*wi`` and likewise ``q``.

    ``w`` is the squared voltage at the sending end of the arc.
    """

    p_w: float
    p_r: float
    p_i: float
    q_w: float
    q_r: float
    q_i: float

    def flows(self, w: float, wr: float, wi: float) -> tuple[float, float]:
        return (
            self.p_w * w + self.p_r * wr + self.p_i * wi,
            self.q_w * w + self.q_r * wr + self.q_i * wi,
        )


@dataclass(frozen=True)
class BranchCoefficients:
    forward: FlowCoefficients
    reverse: FlowCoefficients


def soc_branch_coefficients(branch: Branch) -> BranchCoefficients:
    """Lifted flow coefficients of ``branch``; see :func:`admittance_coefficients`."""
    return admittance_coefficients(branch.y, branch.y_shunt)


def admittance_coefficients(y: complex, y_shunt: complex) -> BranchCoefficients:
    """Coefficients of the lifted flow equations, derived from the complex ones.

    Writing ``V_f V_t^* = wr - j*wi`` and expanding
    ``(Y + Yc)^* w_f - Y^* V_f V_t^*`` (forward) and
    ``(Y + Yc)^* w_t - Y^* V_f^* V_t`` (reverse) into real and imaginary parts.
    Both ends use the voltage at their own bus.
    """
    g, b = y.real, y.imag
    gc, bc = y_shunt.real, y_shunt.imag
    fwd = FlowCoefficients(g + gc, -g, b, -(b + bc), b, g)
    rev = FlowCoefficients(g + gc, -g, -b, -(b + bc), b, -g)
    return BranchCoefficients(fwd, rev)


def build_soc(net: PowerNetwork, pd, qd) -> Formulation:
    pd, qd = check_loads(net, pd, qd)
    idx = net.bus_index
    ne = len(net.branches)
    bus_ids = [b.id for b in net.buses]
    pairs = [[k, br.f_bus, br.t_bus] for k, br in enumerate(net.branches)]
    variables = [
        VariableBlock("w", bus_ids, [b.vmin**2 for b in net.buses], [b.vmax**2 for b in net.buses]),
        VariableBlock("wr", pairs, [None] * ne, [None] * ne),
        VariableBlock("wi", [list(p) for p in pairs], [None] * ne, [None] * ne),
        *generator_blocks(net),
        *flow_blocks(net),
    ]

    gens, out = bus_incidence(net)
    cons = []
    for i, bus in enumerate(net.buses):
        cons.append(
            Constraint(
                "balance-active",
                {"bus": bus.id, "w": i, "pg": gens[i], "pf": out[i]},
                {"pd": float(pd[i]), "gs": bus.gs},
            )
        )
    for i, bus in enumerate(net.buses):
        cons.append(
            Constraint(
                "balance-reactive",
                {"bus": bus.id, "w": i, "qg": gens[i], "qf": out[i]},
                {"qd": float(qd[i]), "bs": bus.bs},
            )
        )
    coefs = [soc_branch_coefficients(br) for br in net.branches]
    for a, (k, f, _t) in enumerate(arcs(net)):
        forward = a < ne
        gamma = coefs[k].forward if forward else coefs[k].reverse
        cons.append(
            Constraint(
                "ohm",
                {"branch": k, "direction": "forward" if forward else "reverse",
                 "pf": a, "qf": a, "w": idx[f], "wr": k, "wi": k},
                asdict(gamma),
            )
        )
    cons += thermal_constraints(net, "thermal-soc")
    for k, br in enumerate(net.branches):
        cons.append(Constraint("jabr-soc", {"branch": k, "wr": k, "wi": k, "w": [idx[br.f_bus], idx[br.t_bus]]}, {}))
    for k, br in enumerate(net.branches):
        # wi / wr = tan(va_t - va_f), so a difference window on va_f - va_t is
        # tan(angmin) * wr <= -wi <= tan(angmax) * wr; only meaningful inside (-90, 90) degrees.
        lo = math.tan(br.angmin) if -math.pi / 2 < br.angmin else None
        hi = math.tan(br.angmax) if br.angmax < math.pi / 2 else None
        if lo is not None or hi is not None:
            cons.append(Constraint("angle-difference", {"branch": k, "wr": k, "wi": k}, {"tan_min": lo, "tan_max": hi}))
    return Formulation("soc", variables, cons, linear_objective(net))
