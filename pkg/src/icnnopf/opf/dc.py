"""DC-OPF as a linear program, and its value function.

Variables are laid out as ``[pg (per generator), va (per bus), pf (per branch)]``.
Rows are, in order: one power balance per bus, one Ohm's-law row per branch,
the slack-angle pin, then angle-difference rows for branches whose limits are
finite. Reverse flows are not modeled (``pf`` is the from-to flow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..grid import Branch, PowerNetwork
from ..lp import EQ, GE, LE, OPTIMAL, LinearProgram, LpSolution, solve
from .formulation import Constraint, Formulation, VariableBlock, finite_or_none

# pf_ij = FLOW_SIGN * b_ij * (va_j - va_i), with b_ij = Im(1 / (r + jx)) < 0 for
# inductive lines, so power flows from the leading to the lagging angle.
FLOW_SIGN = 1.0


def dc_flow_coefficient(branch: Branch) -> float:
    """Coefficient ``k`` in ``pf = k * (va_to - va_from)``."""
    return FLOW_SIGN * branch.b


@dataclass(frozen=True)
class DcOpfProblem:
    net: PowerNetwork
    pd: np.ndarray
    lp: LinearProgram
    gen_cols: np.ndarray
    angle_cols: np.ndarray
    flow_cols: np.ndarray
    balance_rows: np.ndarray
    ohm_rows: np.ndarray
    slack_row: int
    angle_rows: tuple[tuple[int, int, str], ...]  # (row, branch, "min"|"max")

    @property
    def n_vars(self) -> int:
        return self.lp.shape[1]

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(pg, va, pf)`` views of a primal vector."""
        return x[self.gen_cols], x[self.angle_cols], x[self.flow_cols]


def build_dc(net: PowerNetwork, pd, angle_limits: bool = True) -> DcOpfProblem:
    pd = np.asarray(pd, dtype=float).ravel()
    nb, ng, ne = net.n_bus, len(net.generators), len(net.branches)
    if pd.shape != (nb,):
        raise ValueError(f"pd must have one entry per bus ({nb}), got {pd.shape}")
    idx = net.bus_index
    gen_cols = np.arange(ng)
    angle_cols = ng + np.arange(nb)
    flow_cols = ng + nb + np.arange(ne)
    n = ng + nb + ne

    rows, cols, vals = [], [], []
    b = []
    kinds = []

    for k, g in enumerate(net.generators):
        rows.append(idx[g.bus]), cols.append(gen_cols[k]), vals.append(1.0)
    for k, br in enumerate(net.branches):
        i, j = idx[br.f_bus], idx[br.t_bus]
        rows += [i, j]
        cols += [flow_cols[k], flow_cols[k]]
        vals += [-1.0, 1.0]
    b += list(pd)
    kinds += [EQ] * nb
    balance_rows = np.arange(nb)

    r = nb
    ohm_rows = np.arange(nb, nb + ne)
    for k, br in enumerate(net.branches):
        i, j = idx[br.f_bus], idx[br.t_bus]
        coef = dc_flow_coefficient(br)
        # pf - coef * (va_j - va_i) = 0
        rows += [r, r, r]
        cols += [flow_cols[k], angle_cols[j], angle_cols[i]]
        vals += [1.0, -coef, coef]
        b.append(0.0)
        kinds.append(EQ)
        r += 1

    slack_row = r
    rows.append(r), cols.append(angle_cols[idx[net.slack_bus]]), vals.append(1.0)
    b.append(0.0)
    kinds.append(EQ)
    r += 1

    angle_rows = []
    if angle_limits:
        for k, br in enumerate(net.branches):
            i, j = idx[br.f_bus], idx[br.t_bus]
            for limit, kind, tag in ((br.angmin, GE, "min"), (br.angmax, LE, "max")):
                if math.isfinite(limit):
                    rows += [r, r]
                    cols += [angle_cols[i], angle_cols[j]]
                    vals += [1.0, -1.0]
                    b.append(limit)
                    kinds.append(kind)
                    angle_rows.append((r, k, tag))
                    r += 1

    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))
    c = np.zeros(n)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for k, g in enumerate(net.generators):
        c[gen_cols[k]] = g.cost
        lb[gen_cols[k]] = g.pmin
        ub[gen_cols[k]] = g.pmax
    for k, br in enumerate(net.branches):
        if math.isfinite(br.rate):
            lb[flow_cols[k]] = -br.rate
            ub[flow_cols[k]] = br.rate

    lp = LinearProgram(c=c, A=A, b=np.asarray(b), kinds=tuple(kinds), lb=lb, ub=ub)
    return DcOpfProblem(
        net=net,
        pd=pd,
        lp=lp,
        gen_cols=gen_cols,
        angle_cols=angle_cols,
        flow_cols=flow_cols,
        balance_rows=balance_rows,
        ohm_rows=ohm_rows,
        slack_row=slack_row,
        angle_rows=tuple(angle_rows),
    )


@dataclass
class DcValue:
    """Optimal value ``z`` and its load gradient ``y`` (balance-row duals by bus)."""

    status: str
    z: float | None
    y: np.ndarray | None
    solution: LpSolution
    problem: DcOpfProblem

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def value_and_gradient(net: PowerNetwork, pd, tol: float = 1e-8) -> DcValue:
    """Solve DC-OPF at loads ``pd``.

    The balance rows read ``... = pd_i``, so their duals are the derivative of
    the optimal cost with respect to ``pd_i`` (nodal prices). At degenerate
    loads they are the interior-point limit, which is one subgradient.
    """
    prob = build_dc(net, pd)
    sol = solve(prob.lp, tol=tol)
    if not sol.optimal:
        return DcValue(sol.status, None, None, sol, prob)
    return DcValue(sol.status, sol.objective, sol.y[prob.balance_rows].copy(), sol, prob)


def dc_formulation(prob: DcOpfProblem) -> Formulation:
    """Export view of the DC LP: one constraint per LP row, columns by index."""
    lp, net = prob.lp, prob.net
    lower = [finite_or_none(v) for v in lp.lb]
    upper = [finite_or_none(v) for v in lp.ub]
    blocks = []
    for name, cols_, keys in (
        ("pg", prob.gen_cols, list(range(len(net.generators)))),
        ("va", prob.angle_cols, [b.id for b in net.buses]),
        ("pf", prob.flow_cols, list(range(len(net.branches)))),
    ):
        blocks.append(VariableBlock(name, keys, [lower[c] for c in cols_], [upper[c] for c in cols_]))

    labels = {}
    for k, r in enumerate(prob.balance_rows):
        labels[int(r)] = ("balance", {"bus": net.buses[k].id})
    for k, r in enumerate(prob.ohm_rows):
        br = net.branches[k]
        labels[int(r)] = ("ohm", {"branch": k, "from_bus": br.f_bus, "to_bus": br.t_bus})
    labels[prob.slack_row] = ("reference-angle", {"bus": net.slack_bus})
    for r, k, tag in prob.angle_rows:
        labels[r] = (f"angle-difference-{tag}", {"branch": k})

    A = lp.A.tocsr()
    constraints = []
    for r in range(A.shape[0]):
        kind, meta = labels[r]
        lo, hi = A.indptr[r], A.indptr[r + 1]
        constraints.append(
            Constraint(
                kind=kind,
                indices={**meta, "columns": A.indices[lo:hi].tolist()},
                coefficients={"values": A.data[lo:hi].tolist(), "sense": lp.kinds[r], "rhs": float(lp.b[r])},
            )
        )
    nz = np.flatnonzero(lp.c)
    objective = {"sense": "min", "columns": nz.tolist(), "coefficients": lp.c[nz].tolist(), "constant": 0.0}
    return Formulation("dc", blocks, constraints, objective)
