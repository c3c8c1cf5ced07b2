"""Primal-dual interior-point LP solver.

The general-form problem is rewritten as ``min c'x, Ax = b, x >= 0`` and
solved through the homogeneous self-dual embedding with Mehrotra's
predictor-corrector steps. The embedding detects infeasible and unbounded
problems through the ``tau -> 0`` limit instead of diverging.

The normal equations are formed densely; this is meant for problems with up
to a few thousand rows (DC-OPF of a few hundred buses).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .model import (
    GE,
    INFEASIBLE,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    LpSolution,
    NumericalError,
)

STEP_FRACTION = 0.9995
MAX_ITER = 200


class StandardForm:
    """``x = offset + T @ xs`` with ``xs >= 0`` and ``As xs = bs``.

    Rows of ``As`` are the original rows (with slack columns for
    inequalities) followed by one row per finite upper bound of a variable
    that also has a finite lower bound.
    """

    def __init__(self, lp: LinearProgram):
        m, n = lp.shape
        lb, ub = lp.lb, lp.ub
        offset = np.zeros(n)
        t_rows, t_cols, t_vals = [], [], []
        ub_pairs = []  # (std column, width)
        col = 0
        for j in range(n):
            lo, hi = lb[j], ub[j]
            if np.isfinite(lo):
                offset[j] = lo
                t_rows.append(j), t_cols.append(col), t_vals.append(1.0)
                if np.isfinite(hi):
                    ub_pairs.append((col, hi - lo))
                col += 1
            elif np.isfinite(hi):
                offset[j] = hi
                t_rows.append(j), t_cols.append(col), t_vals.append(-1.0)
                col += 1
            else:
                t_rows += [j, j]
                t_cols += [col, col + 1]
                t_vals += [1.0, -1.0]
                col += 2
        n_struct = col
        T = sp.csr_matrix((t_vals, (t_rows, t_cols)), shape=(n, n_struct))

        AT = (lp.A @ T).tocoo()
        rows, cols, vals = list(AT.row), list(AT.col), list(AT.data)
        bs = list(lp.b - lp.A @ offset)
        for i, kind in enumerate(lp.kinds):
            if kind == GE:
                rows.append(i), cols.append(col), vals.append(-1.0)
                col += 1
            elif kind == LE:
                rows.append(i), cols.append(col), vals.append(1.0)
                col += 1
        for k, (c_struct, width) in enumerate(ub_pairs):
            r = m + k
            rows += [r, r]
            cols += [c_struct, col]
            vals += [1.0, 1.0]
            bs.append(width)
            col += 1

        self.n_orig, self.m_orig = n, m
        self.T = T
        self.offset = offset
        self.A = sp.csr_matrix((vals, (rows, cols)), shape=(m + len(ub_pairs), col))
        self.b = np.asarray(bs, dtype=float)
        c = np.zeros(col)
        c[:n_struct] = T.T @ lp.c
        self.c = c
        self.c_const = float(lp.c @ offset)

    def recover(self, xs: np.ndarray) -> np.ndarray:
        return self.offset + self.T @ xs[: self.T.shape[1]]


def _factor(M: np.ndarray):
    """Cholesky of the normal matrix, regularizing the diagonal when needed."""
    scale = max(float(np.max(np.abs(np.diag(M)))) if M.size else 1.0, 1e-300)
    for reg in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
        try:
            return sla.cho_factor(M + reg * scale * np.eye(M.shape[0]), check_finite=False)
        except (sla.LinAlgError, ValueError):
            continue
    raise NumericalError("normal equations are singular")


def _independent_rows(A: np.ndarray, b: np.ndarray, tol: float):
    """Rows of a maximal independent subset, or None when ``Ax = b`` is inconsistent."""
    m = A.shape[0]
    if m == 0:
        return np.arange(0)
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * max(diag[0], 1.0))) if diag.size else 0
    if rank == m:
        return np.arange(m)
    keep = np.sort(piv[:rank])
    sol, *_ = np.linalg.lstsq(A[keep], b[keep], rcond=None)
    if np.linalg.norm(A @ sol - b) > max(tol, 1e-9) * (1.0 + np.linalg.norm(b)):
        return None
    return keep


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _mehrotra_start(A: np.ndarray, b: np.ndarray, c: np.ndarray):
    m, n = A.shape
    try:
        F = _factor(A @ A.T) if m else None
        y = sla.cho_solve(F, A @ c) if m else np.zeros(0)
        x = A.T @ sla.cho_solve(F, b) if m else np.zeros(n)
    except NumericalError:
        return np.ones(n), np.zeros(m), np.ones(n)
    z = c - A.T @ y
    x = x + max(-1.5 * float(np.min(x, initial=0.0)), 0.0)
    z = z + max(-1.5 * float(np.min(z, initial=0.0)), 0.0)
    xz = float(x @ z)
    if not np.isfinite(xz) or xz <= 0 or x.sum() <= 0 or z.sum() <= 0:
        return np.ones(n), np.zeros(m), np.ones(n)
    x = x + 0.5 * xz / z.sum()
    z = z + 0.5 * xz / x.sum()
    # when c lies in the row space of A the shifted z can be ~0, which makes
    # the first scaling matrix x/z explode; keep both away from zero
    x = np.maximum(x, 1e-2 * max(1.0, float(np.abs(x).max())))
    z = np.maximum(z, 1e-2 * max(1.0, float(np.abs(z).max())))
    if np.min(x) <= 0 or np.min(z) <= 0:
        return np.ones(n), np.zeros(m), np.ones(n)
    return x, y, z


def _hsd(A, b, c, tol, max_iter, record):
    m, n = A.shape
    x, y, z = _mehrotra_start(A, b, c)
    tau, kappa = 1.0, 1.0
    nb, nc = np.linalg.norm(b), np.linalg.norm(c)
    history = []

    def residuals():
        rp = tau * b - A @ x
        rd = tau * c - A.T @ y - z
        rg = kappa + c @ x - b @ y
        return rp, rd, rg

    rp0, rd0, rg0 = residuals()
    mu0 = (x @ z + tau * kappa) / (n + 1)
    np0, nd0, ng0 = max(1.0, np.linalg.norm(rp0)), max(1.0, np.linalg.norm(rd0)), max(1.0, abs(rg0))

    status = ITERATION_LIMIT
    it = 0
    for it in range(max_iter + 1):
        rp, rd, rg = residuals()
        mu = (x @ z + tau * kappa) / (n + 1)
        xs, ys, zs = x / tau, y / tau, z / tau
        pobj, dobj = float(c @ xs), float(b @ ys)
        pres = np.linalg.norm(A @ xs - b) / (1.0 + nb)
        dres = np.linalg.norm(A.T @ ys + zs - c) / (1.0 + nc)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        if record:
            history.append(
                dict(
                    iteration=it,
                    primal_objective=pobj,
                    dual_objective=dobj,
                    slack=float(abs(ys @ (A @ xs - b)) + abs(xs @ (A.T @ ys + zs - c))),
                    mu=float(mu),
                    tau=float(tau),
                    primal_residual=float(pres),
                    dual_residual=float(dres),
                )
            )
        if pres <= tol and dres <= tol and gap <= tol:
            status = OPTIMAL
            break
        # tau -> 0 with vanishing residuals certifies infeasibility of one side
        if (
            np.linalg.norm(rp) / np0 <= tol
            and np.linalg.norm(rd) / nd0 <= tol
            and abs(rg) / ng0 <= tol
            and mu / mu0 <= tol
            and tau <= tol * max(1.0, kappa)
        ):
            status = INFEASIBLE
            break
        if it == max_iter:
            break

        D = x / z
        M = (A * D) @ A.T if m else np.zeros((0, 0))
        F = _factor(M) if m else None

        def msolve(r):
            return sla.cho_solve(F, r, check_finite=False) if m else np.zeros(0)

        p = msolve(b + A @ (D * c))
        u = D * (A.T @ p - c)
        denom_p = b @ p - c @ u

        def direction(eta, r4, r5):
            t = r4 / x - eta * rd
            q = msolve(eta * rp - A @ (D * t))
            v = D * (A.T @ q + t)
            dtau = (eta * rg - b @ q + c @ v + r5 / tau) / (denom_p + kappa / tau)
            dy = p * dtau + q
            dx = u * dtau + v
            dz = (r4 - z * dx) / x
            dkappa = (r5 - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        def step_to_boundary(dx, dz, dtau, dkappa):
            return min(
                _max_step(x, dx),
                _max_step(z, dz),
                _max_step(np.array([tau]), np.array([dtau])),
                _max_step(np.array([kappa]), np.array([dkappa])),
            )

        # predictor
        dx, dy, dz, dtau, dkappa = direction(1.0, -x * z, -tau * kappa)
        a_aff = min(1.0, step_to_boundary(dx, dz, dtau, dkappa))
        mu_aff = ((x + a_aff * dx) @ (z + a_aff * dz) + (tau + a_aff * dtau) * (kappa + a_aff * dkappa)) / (n + 1)
        sigma = (mu_aff / mu) ** 3

        # corrector
        r4 = sigma * mu - x * z - dx * dz
        r5 = sigma * mu - tau * kappa - dtau * dkappa
        dx, dy, dz, dtau, dkappa = direction(1.0 - sigma, r4, r5)
        alpha = min(1.0, STEP_FRACTION * step_to_boundary(dx, dz, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 0 or not np.isfinite(mu):
            raise NumericalError("interior-point step collapsed")

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    return status, x / tau, y / tau, z / tau, it, (pres, dres, gap), history


def _vertex(A, b, c, basis, x_ref, tol):
    try:
        xb = np.linalg.solve(A[:, basis], b)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(xb)) or np.min(xb) < -1e-9 * (1.0 + np.abs(xb).max()):
        return None
    xv = np.zeros(A.shape[1])
    xv[basis] = np.maximum(xb, 0.0)
    if np.linalg.norm(A @ xv - b) > 1e-9 * (1.0 + np.linalg.norm(b)):
        return None
    if c @ xv > c @ x_ref + tol * (1.0 + abs(c @ x_ref)):
        return None
    return xv


def _polish(A, b, c, x, z, tol):
    """Exact vertex near the interior solution, or None.

    Columns with ``x_j >> z_j`` span the optimal face. While they are
    linearly dependent (non-unique primal optimum) the point is moved along a
    null-space direction that does not increase cost until a column drops
    out; a basis is then completed by pivoted QR and solved exactly. The
    vertex replaces ``x`` only when it is feasible and no worse.
    """
    m = A.shape[0]
    if m == 0:
        return None
    w = x / np.maximum(z, 1e-300)
    w = w / w.max()
    cand = list(np.flatnonzero(w > 1e-6))
    xf = x.copy()
    N = sla.null_space(A[:, cand]) if cand else np.zeros((0, 0))
    while N.shape[1] > 0:
        d = N[:, 0]
        if c[cand] @ d > 0:
            d = -d
        if not np.any(d < -1e-9):
            d = -d
            if c[cand] @ d < -1e-12 * (1 + np.abs(c).max()):
                return None
        xc = xf[cand]
        neg = d < -1e-9
        ratios = xc[neg] / -d[neg]
        t = ratios.min()
        if abs(c[cand] @ d) * t > tol * (1.0 + abs(c @ x)):
            return None
        out = np.flatnonzero(neg)[np.argmin(ratios)]
        xf[cand] = np.maximum(xc + t * d, 0.0)
        xf[cand[out]] = 0.0
        del cand[out]
        N = _drop_null_row(N, out)
    weight = np.where(np.isin(np.arange(A.shape[1]), cand), 1.0, 1e-3 * w)
    _, R, piv = sla.qr(A * weight, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size < m or diag[m - 1] <= 1e-12 * diag[0]:
        return None
    return _vertex(A, b, c, piv[:m], x, tol)


def _drop_null_row(N: np.ndarray, row: int) -> np.ndarray:
    """Orthonormal null-space basis after deleting column ``row`` from the matrix.

    A Householder reflection concentrates ``N[row]`` in the first basis
    vector, which is then discarded together with the row.
    """
    r = N[row]
    norm = np.linalg.norm(r)
    if norm > 0:
        v = r.copy()
        v[0] += np.copysign(norm, r[0])
        N = N - np.outer(N @ v, 2.0 * v / (v @ v))
        N = N[:, 1:]
    return np.delete(N, row, axis=0)


def _dual_polish(A, c, x, y, tol):
    """Closest dual to ``y`` that is complementary to the vertex ``x``, or None.

    Columns with ``x_j > 0`` must have zero reduced cost. Projecting the
    interior dual onto that affine set keeps it at the analytic-center choice
    up to rounding while closing the duality gap exactly.
    """
    J = np.flatnonzero(x > 0)
    if J.size == 0:
        return None
    AJ = A[:, J]
    d, *_ = np.linalg.lstsq(AJ.T, c[J] - AJ.T @ y, rcond=None)
    yp = y + d
    z = c - A.T @ yp
    scale = 1.0 + np.abs(c).max()
    if np.abs(z[J]).max() > 1e-9 * scale or z.min() < -tol * scale:
        return None
    return yp


def solve(lp: LinearProgram, tol: float = 1e-8, max_iter: int = MAX_ITER, record_history: bool = False) -> LpSolution:
    """Solve ``lp`` to relative primal/dual/gap tolerance ``tol``.

    Infeasible, unbounded and iteration-limited runs are reported through
    ``LpSolution.status``; only persistently singular normal equations raise.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    sf = StandardForm(lp)
    A, b, c = sf.A.toarray(), sf.b, sf.c

    # drop empty rows and columns
    row_nz = np.any(A != 0, axis=1)
    if np.any(np.abs(b[~row_nz]) > tol * (1 + np.abs(b[~row_nz]))):
        return LpSolution(status=INFEASIBLE)
    col_nz = np.any(A != 0, axis=0)
    if np.any(c[~col_nz] < 0):
        return LpSolution(status=UNBOUNDED)
    Ar = A[np.ix_(row_nz, col_nz)]
    keep = _independent_rows(Ar, b[row_nz], tol)
    if keep is None:
        return LpSolution(status=INFEASIBLE)
    row_idx = np.flatnonzero(row_nz)[keep]
    row_nz = np.zeros_like(row_nz)
    row_nz[row_idx] = True
    Ar = A[np.ix_(row_nz, col_nz)]

    status, xr, yr, zr, iters, (pres, dres, gap), hist = _hsd(Ar, b[row_nz], c[col_nz], tol, max_iter, record_history)
    if status == INFEASIBLE and np.any(c[col_nz] != 0):
        # the embedding only says one side is infeasible; a zero-cost
        # feasibility solve tells primal infeasibility from unboundedness
        feas = _hsd(Ar, b[row_nz], np.zeros(int(col_nz.sum())), tol, max_iter, False)[0]
        if feas == OPTIMAL:
            status = UNBOUNDED
    if status != OPTIMAL:
        return LpSolution(status=status, iterations=iters, history=hist, primal_residual=pres, dual_residual=dres, gap=gap)

    br, cr = b[row_nz], c[col_nz]
    xv = _polish(Ar, br, cr, xr, zr, tol)
    if xv is not None:
        xr = xv
        yp = _dual_polish(Ar, cr, xr, yr, tol)
        if yp is not None:
            yr = yp
            zneg = np.minimum(cr - Ar.T @ yr, 0.0)
            dres = float(np.linalg.norm(zneg) / (1.0 + np.linalg.norm(cr)))
    xs = np.zeros(A.shape[1])
    xs[col_nz] = xr
    ys = np.zeros(A.shape[0])
    ys[row_nz] = yr
    x = sf.recover(xs)
    y = ys[: sf.m_orig]
    obj = float(lp.c @ x)
    # the dual objective includes the bound-row and offset contributions
    dual_obj = float(b @ ys) + sf.c_const
    pres = float(np.linalg.norm(Ar @ xr - br) / (1.0 + np.linalg.norm(br)))
    gap = abs(obj - dual_obj) / (1.0 + abs(obj))
    return LpSolution(
        status=OPTIMAL,
        x=x,
        y=y,
        reduced_costs=lp.c - lp.A.T @ y,
        objective=obj,
        dual_objective=dual_obj,
        iterations=iters,
        primal_residual=pres,
        dual_residual=dres,
        gap=gap,
        history=hist,
    )
