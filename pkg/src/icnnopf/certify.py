"""Data-driven generalization bounds for convex value-function surrogates.

Support data are triples ``(b_i, value_i, grad_i)``. For a convex function
they define a lower envelope (the best tangent plane) and an upper envelope
(the cheapest convex combination of support values reaching ``b``). Both are
computable from the data alone, so the worst gap between a surrogate and the
true value function can be bounded over the hull of the training inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from ._jsonio import dumps
from .icnn import IcnnModel, forward, input_gradient
from .lp import EQ, OPTIMAL, LinearProgram, solve

EXACT_DIAMETER_LIMIT = 5000
CERTIFICATE_VERSION = 1


@dataclass(frozen=True)
class EnvelopePair:
    points: np.ndarray
    values: np.ndarray
    grads: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.points, dtype=float))
        if np.ndim(self.points) == 1:
            B = B.T
        z = np.asarray(self.values, dtype=float).ravel()
        Y = np.asarray(self.grads, dtype=float).reshape(B.shape)
        if z.shape != (B.shape[0],):
            raise ValueError("one value per support point is required")
        for arr in (B, z, Y):
            if not np.all(np.isfinite(arr)):
                raise ValueError("support data must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "points", B)
        object.__setattr__(self, "values", z)
        object.__setattr__(self, "grads", Y)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_model(cls, model: IcnnModel, points) -> "EnvelopePair":
        """Support data of ``model`` itself at ``points``."""
        B = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(B, forward(model, B), input_gradient(model, B))


def _query(env: EnvelopePair, b) -> tuple[np.ndarray, bool]:
    q = np.asarray(b, dtype=float)
    single = q.ndim <= 1 and (q.size == env.dim)
    q = q.reshape(-1, env.dim)
    return q, single


def lower_env(env: EnvelopePair, b):
    """``max_i value_i + grad_i . (b - b_i)`` at one point or a batch of rows."""
    q, single = _query(env, b)
    offsets = env.values - np.einsum("ij,ij->i", env.grads, env.points)
    vals = (q @ env.grads.T + offsets).max(axis=1)
    return float(vals[0]) if single else vals


def upper_env(env: EnvelopePair, b) -> float | None:
    """``min sum(lam * value)`` over ``lam >= 0``, ``sum(lam) = 1``, ``sum(lam * b_i) = b``.

    Returns None when ``b`` lies outside the convex hull of the support points.
    """
    q = np.asarray(b, dtype=float).ravel()
    if q.size != env.dim:
        raise ValueError(f"expected a point of dimension {env.dim}")
    A = sp.csr_matrix(np.vstack([np.ones(env.size), env.points.T]))
    lp = LinearProgram(
        c=env.values,
        A=A,
        b=np.concatenate([[1.0], q]),
        kinds=(EQ,) * (env.dim + 1),
        lb=np.zeros(env.size),
        ub=np.full(env.size, np.inf),
    )
    sol = solve(lp)
    if sol.status != OPTIMAL:
        return None
    return sol.objective


def lower_hull_1d(x: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the lower convex hull of points ``(x_i, v_i)``, sorted by ``x``.

    Linear interpolation between them is the 1-D upper envelope.
    """
    order = np.lexsort((v, x))
    hull: list[tuple[float, float]] = []
    for xi, vi in zip(x[order], v[order]):
        if hull and hull[-1][0] == xi:
            continue
        while len(hull) >= 2:
            (x1, v1), (x2, v2) = hull[-2], hull[-1]
            if (v2 - v1) * (xi - x1) >= (vi - v1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append((float(xi), float(vi)))
    hx, hv = zip(*hull)
    return np.array(hx), np.array(hv)


def upper_env_1d(env: EnvelopePair, b) -> np.ndarray:
    """Closed-form upper envelope for scalar inputs; NaN outside the hull."""
    if env.dim != 1:
        raise ValueError("closed form requires one-dimensional inputs")
    hx, hv = lower_hull_1d(env.points[:, 0], env.values)
    q = np.asarray(b, dtype=float).ravel()
    # convex combinations can round one ulp past the ends; treat those as inside
    tol = 1e-12 * (1.0 + hx[-1] - hx[0] + max(abs(hx[0]), abs(hx[-1])))
    out = np.interp(np.clip(q, hx[0], hx[-1]), hx, hv)
    out[(q < hx[0] - tol) | (q > hx[-1] + tol)] = np.nan
    return out


def line_breakpoints(slopes: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Abscissas where the maximum of the lines ``slope * x + offset`` changes line."""
    order = np.lexsort((offsets, slopes))
    s, c = slopes[order], offsets[order]
    keep = np.append(s[1:] != s[:-1], True)
    s, c = s[keep], c[keep]
    hull: list[int] = []
    for j in range(len(s)):
        while len(hull) >= 2:
            i, k = hull[-2], hull[-1]
            # line k is never on top if line j overtakes i no later than k does
            if (c[i] - c[j]) * (s[k] - s[i]) <= (c[i] - c[k]) * (s[j] - s[i]):
                hull.pop()
            else:
                break
        hull.append(j)
    return np.array([(c[i] - c[k]) / (s[k] - s[i]) for i, k in zip(hull[:-1], hull[1:])])


@dataclass
class BoundCertificate:
    kind: str
    bound: float
    value_residual: float
    gradient_residual: float
    samples: int
    diameter: float | None = None
    diameter_mode: str | None = None
    binding: bool = True
    fit_tol: float | None = None
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": CERTIFICATE_VERSION,
            "kind": self.kind,
            "bound": self.bound,
            "binding": self.binding,
            "residuals": {"value": self.value_residual, "gradient": self.gradient_residual},
            "fit_tol": self.fit_tol,
            "diameter": self.diameter,
            "diameter_mode": self.diameter_mode,
            "samples": self.samples,
            "seed": self.seed,
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return dumps(self.to_dict()) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def fit_residuals(surrogate: EnvelopePair, truth: EnvelopePair) -> tuple[float, float]:
    """Largest value error and largest gradient error (Euclidean) at shared points."""
    if surrogate.points.shape != truth.points.shape or not np.array_equal(surrogate.points, truth.points):
        raise ValueError("surrogate and true data must share their support points")
    dv = float(np.max(np.abs(surrogate.values - truth.values)))
    dg = float(np.max(np.linalg.norm(surrogate.grads - truth.grads, axis=1)))
    return dv, dg


def envelope_gap(f: EnvelopePair, phi: EnvelopePair, b) -> float:
    """``max(upper_f - lower_phi, upper_phi - lower_f)`` at a hull point ``b``."""
    uf, up = upper_env(f, b), upper_env(phi, b)
    if uf is None or up is None:
        raise ValueError("point lies outside the hull of the support data")
    return max(uf - lower_env(phi, b), up - lower_env(f, b))


def dirichlet_points(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    """``n`` random convex combinations of ``points`` with flat Dirichlet weights."""
    rng = np.random.default_rng(seed)
    lam = rng.dirichlet(np.ones(points.shape[0]), size=n) if n else np.zeros((0, points.shape[0]))
    return lam @ points


def theorem1_bound(f: EnvelopePair, phi: EnvelopePair, samples: int = 1000, seed: int = 0) -> BoundCertificate:
    """Sampled estimate of the worst envelope gap over the hull of the support points.

    The evaluated set is every support point followed by ``samples`` Dirichlet
    combinations; the result is the maximum gap over that set, so it can only
    grow with more samples and is a lower estimate of the supremum.
    """
    if f.size == 0:
        raise ValueError("empty support data")
    dv, dg = fit_residuals(f, phi)
    pts = np.vstack([f.points, dirichlet_points(f.points, samples, seed)])
    gaps = np.array(sampled_gaps(f, phi, pts))
    return BoundCertificate(
        kind="theorem1-sampled",
        bound=float(gaps.max()),
        value_residual=dv,
        gradient_residual=dg,
        samples=samples,
        seed=seed,
        provenance={"support_points": f.size, "dimension": f.dim},
    )


def sampled_gaps(f: EnvelopePair, phi: EnvelopePair, pts: np.ndarray) -> list[float]:
    if f.dim == 1:
        x = pts[:, 0]
        uf, up = upper_env_1d(f, x), upper_env_1d(phi, x)
        return list(np.maximum(uf - lower_env(phi, pts), up - lower_env(f, pts)))
    return [envelope_gap(f, phi, p) for p in pts]


def theorem1_exact_1d(f: EnvelopePair, phi: EnvelopePair) -> BoundCertificate:
    """Exact supremum of the envelope gap for scalar inputs.

    Every envelope is piecewise linear, so the gap is piecewise linear
    between the union of support abscissas and tangent-line breakpoints, and
    its maximum over the hull sits at one of them.
    """
    if f.dim != 1:
        raise ValueError("exact mode requires one-dimensional inputs")
    if f.size == 0:
        raise ValueError("empty support data")
    dv, dg = fit_residuals(f, phi)
    x = f.points[:, 0]
    lo, hi = x.min(), x.max()
    cand = [x]
    for env in (f, phi):
        s = env.grads[:, 0]
        cand.append(line_breakpoints(s, env.values - s * env.points[:, 0]))
    c = np.unique(np.concatenate(cand))
    c = c[(c >= lo) & (c <= hi)]
    gaps = np.array(sampled_gaps(f, phi, c[:, None]))
    i = int(np.argmax(gaps))
    return BoundCertificate(
        kind="theorem1-exact-1d",
        bound=float(gaps[i]),
        value_residual=dv,
        gradient_residual=dg,
        samples=int(c.size),
        provenance={"support_points": f.size, "argmax": float(c[i])},
    )


def diam_upper(points) -> tuple[float, str]:
    """Largest pairwise distance (exact up to 5000 points), else the bounding-box diagonal."""
    P = np.asarray(points, dtype=float)
    P = P[:, None] if P.ndim == 1 else P
    if P.shape[0] == 0:
        raise ValueError("diameter of an empty set")
    if P.shape[0] > EXACT_DIAMETER_LIMIT:
        return float(np.linalg.norm(P.max(axis=0) - P.min(axis=0))), "bounding-box"
    best = 0.0
    for lo in range(0, P.shape[0], 512):
        best = max(best, float(cdist(P[lo : lo + 512], P).max()))
    return best, "exact"


def theorem2_bound(phi: EnvelopePair, model: IcnnModel, fit_tol: float = 1e-6) -> BoundCertificate:
    """``max_i |grad_i| * diam`` with the perfect-fit preconditions checked.

    The bound is always reported; when the model misses a value or gradient
    by more than ``fit_tol`` the certificate is marked non-binding.
    """
    if phi.size == 0:
        raise ValueError("empty support data")
    surrogate = EnvelopePair.from_model(model, phi.points)
    dv, dg = fit_residuals(surrogate, phi)
    diam, mode = diam_upper(phi.points)
    grad_norm = float(np.max(np.linalg.norm(phi.grads, axis=1)))
    return BoundCertificate(
        kind="theorem2",
        bound=grad_norm * diam,
        value_residual=dv,
        gradient_residual=dg,
        samples=phi.size,
        diameter=diam,
        diameter_mode=mode,
        binding=bool(dv <= fit_tol and dg <= fit_tol),
        fit_tol=fit_tol,
        provenance={"max_gradient_norm": grad_norm, "dimension": phi.dim},
    )


def sample_hull_points(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Support points followed by ``n`` Dirichlet combinations, as used by the sampled bound."""
    return np.vstack([points, dirichlet_points(points, n, seed)])


__all__ = [
    "BoundCertificate",
    "EnvelopePair",
    "diam_upper",
    "dirichlet_points",
    "envelope_gap",
    "fit_residuals",
    "line_breakpoints",
    "lower_env",
    "lower_hull_1d",
    "sample_hull_points",
    "theorem1_bound",
    "theorem1_exact_1d",
    "theorem2_bound",
    "upper_env",
    "upper_env_1d",
]

