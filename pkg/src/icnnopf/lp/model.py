from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

EQ, GE, LE = "=", ">=", "<="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True)
class LinearProgram:
    """``min c'x  s.t.  A x (=|>=|<=) b,  lb <= x <= ub``.

    Bounds may be infinite. Row duals follow the convention that the
    Lagrangian is ``c'x - y'(Ax - b)``, so ``y`` is the sensitivity of the
    optimal value to ``b``: free on ``=`` rows, ``>= 0`` on ``>=`` rows and
    ``<= 0`` on ``<=`` rows.
    """

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    kinds: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        A = sp.csr_matrix(self.A, dtype=float)
        object.__setattr__(self, "A", A)
        for name in ("c", "b", "lb", "ub"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        object.__setattr__(self, "kinds", tuple(self.kinds))
        m, n = A.shape
        if self.c.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError(f"c/lb/ub must have length {n}")
        if self.b.shape != (m,) or len(self.kinds) != m:
            raise ValueError(f"b and kinds must have length {m}")
        if bad := set(self.kinds) - {EQ, GE, LE}:
            raise ValueError(f"unknown row kinds {sorted(bad)}")
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ValueError("A, b and c must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb > self.ub):
            raise ValueError("need lb <= ub componentwise")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @classmethod
    def from_dense(cls, c, A=None, b=None, kinds=None, lb=None, ub=None) -> "LinearProgram":
        """Convenience constructor; defaults to ``x >= 0`` and ``>=`` rows."""
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
        kinds = (GE,) * A.shape[0] if kinds is None else tuple(kinds)
        lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        return cls(c=c, A=sp.csr_matrix(A), b=b, kinds=kinds, lb=lb, ub=ub)


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None  # row duals
    reduced_costs: np.ndarray | None = None  # c - A'y
    objective: float = float("nan")
    dual_objective: float = float("nan")
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")
    history: list[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class NumericalError(RuntimeError):
    """The interior-point normal equations stayed singular after regularization."""
