"""Exhaustive vertex enumeration for tiny LPs.

Independent of the interior-point code path: works on the general form
directly (equalities always active, every inequality and finite bound a
candidate), so it shares nothing with :mod:`icnnopf.lp.ipm` but the
:class:`LinearProgram` container. Used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, islice
from math import comb

import numpy as np
import scipy.linalg as sla

from .model import EQ, GE, INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram

MAX_VARS = 12
MAX_SUBSETS = 2_000_000


@dataclass
class BruteResult:
    status: str
    objective: float = float("nan")
    x: np.ndarray | None = None


def _halfspaces(lp: LinearProgram):
    """Split into ``E x = e`` and ``G x >= h``."""
    A = lp.A.toarray()
    n = A.shape[1]
    E, e, G, h = [], [], [], []
    for row, rhs, kind in zip(A, lp.b, lp.kinds):
        if kind == EQ:
            E.append(row), e.append(rhs)
        elif kind == GE:
            G.append(row), h.append(rhs)
        else:
            G.append(-row), h.append(-rhs)
    eye = np.eye(n)
    for j in range(n):
        if np.isfinite(lp.lb[j]):
            G.append(eye[j]), h.append(lp.lb[j])
        if np.isfinite(lp.ub[j]):
            G.append(-eye[j]), h.append(-lp.ub[j])
    as2d = lambda rows: np.array(rows, dtype=float).reshape(len(rows), n)
    return as2d(E), np.array(e, dtype=float), as2d(G), np.array(h, dtype=float)


def _independent_rows(E: np.ndarray, e: np.ndarray, tol: float):
    """Keep a maximal independent subset of equality rows; None if inconsistent."""
    keep: list[int] = []
    for i in range(E.shape[0]):
        trial = keep + [i]
        if np.linalg.matrix_rank(E[trial], tol=tol) == len(trial):
            keep = trial
    if E.shape[0] and keep != list(range(E.shape[0])):
        sol, *_ = np.linalg.lstsq(E[keep], e[keep], rcond=None)
        if np.max(np.abs(E @ sol - e)) > 1e-7 * (1 + np.max(np.abs(e))):
            return None
    return E[keep], e[keep]


def _enumerate(E, e, G, h, k, tol):
    """All basic solutions with the equalities and ``k`` inequalities active."""
    n = E.shape[1]
    if k > G.shape[0]:
        return np.zeros((0, n))
    subsets = np.array(list(combinations(range(G.shape[0]), k)), dtype=int)
    if k == 0:
        subsets = np.zeros((1, 0), dtype=int)
    M = np.concatenate([np.broadcast_to(E, (len(subsets),) + E.shape), G[subsets]], axis=1)
    r = np.concatenate([np.broadcast_to(e, (len(subsets), e.size)), h[subsets]], axis=1)
    sv = np.linalg.svd(M, compute_uv=False)
    ok = sv[:, -1] > 1e-10 * np.maximum(sv[:, 0], 1.0)
    if not np.any(ok):
        return np.zeros((0, n))
    return np.linalg.solve(M[ok], r[ok][..., None])[..., 0]


def _has_descent_ray(E, G, c, k, chunk=50_000):
    """Whether some extreme ray of ``{E d = 0, G d >= 0}`` has ``c'd < 0``."""
    n = E.shape[1]
    if comb(G.shape[0], k) > MAX_SUBSETS:
        raise ValueError("too many candidate rays for brute force")
    subsets = combinations(range(G.shape[0]), k)
    while True:
        rows = list(islice(subsets, chunk))
        if not rows:
            return False
        batch = np.array(rows, dtype=int).reshape(len(rows), k)
        if n == 1:
            d = np.ones((1, 1))
        else:
            # E has n - 1 - k rows here, so each system is (n - 1) x n
            M = np.concatenate([np.broadcast_to(E, (len(batch),) + E.shape), G[batch]], axis=1)
            _, sv, Vt = np.linalg.svd(M, full_matrices=True)
            ok = sv[:, -1] > 1e-10 * np.maximum(sv[:, 0], 1.0)
            d = Vt[ok, -1, :]
        for s in (d, -d):
            good = np.all(s @ G.T >= -1e-10, axis=1) & (s @ c < -1e-10)
            if np.any(good):
                return True


def brute_force_lp(lp: LinearProgram, tol: float = 1e-9) -> BruteResult:
    """Exact optimum of a small LP by enumerating its vertices.

    Unboundedness is decided from the recession cone: a free direction of the
    constraint system with nonzero cost, or an extreme ray with negative cost.
    """
    n = lp.shape[1]
    if n > MAX_VARS:
        raise ValueError(f"brute force supports at most {MAX_VARS} variables, got {n}")
    E, e, G, h = _halfspaces(lp)
    red = _independent_rows(E, e, tol)
    if red is None:
        return BruteResult(INFEASIBLE)
    E, e = red

    # directions along which the whole constraint system is invariant
    lineality = sla.null_space(np.vstack([E, G])) if n else np.zeros((0, 0))
    lin_cost_free = lineality.size == 0 or np.all(np.abs(lp.c @ lineality) <= 1e-12 * (1 + np.abs(lp.c).max()))
    if lineality.size:
        E = np.vstack([E, lineality.T])
        e = np.concatenate([e, np.zeros(lineality.shape[1])])

    k = n - E.shape[0]
    if k < 0:
        return BruteResult(INFEASIBLE)
    if comb(G.shape[0], k) > MAX_SUBSETS:
        raise ValueError("too many candidate vertices for brute force")

    pts = _enumerate(E, e, G, h, k, tol)
    scale = 1.0 + np.abs(h).max(initial=0.0)
    feas = np.all(pts @ G.T >= h - 1e-7 * scale, axis=1) if len(pts) else np.zeros(0, bool)
    feas &= np.all(np.abs(pts @ E.T - e) <= 1e-7 * scale, axis=1) if len(pts) else feas
    pts = pts[feas]
    if len(pts) == 0:
        return BruteResult(INFEASIBLE)
    if not lin_cost_free:
        return BruteResult(UNBOUNDED)

    # extreme rays of {E d = 0, G d >= 0}: one free dimension left
    if k >= 1 and _has_descent_ray(E, G, lp.c, k - 1):
        return BruteResult(UNBOUNDED)

    vals = pts @ lp.c
    best = int(np.argmin(vals))
    return BruteResult(OPTIMAL, float(vals[best]), pts[best])
