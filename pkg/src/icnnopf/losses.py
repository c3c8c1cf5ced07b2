"""Per-sample losses on normalized residuals ``r = prediction - target``.

Each loss maps a residual array to ``(values, derivatives)``; batch losses are
means of the values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SquaredLoss:
    name = "squared"

    def __call__(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=float)
        return r * r, 2.0 * r


@dataclass(frozen=True)
class AsymmetricLoss:
    """``kappa_over * r^2`` for over-estimates (``r > 0``), ``kappa_under * r^2`` otherwise."""

    kappa_under: float = 1.0
    kappa_over: float = 1.0
    name = "asymmetric"

    def __post_init__(self):
        if not (self.kappa_under >= 0 and self.kappa_over >= 0):
            raise ValueError("asymmetry weights must be nonnegative")

    def __call__(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=float)
        k = np.where(r > 0, self.kappa_over, self.kappa_under)
        return k * r * r, 2.0 * k * r


def asymmetric_loss(residual, kappa_under: float = 1.0, kappa_over: float = 1.0):
    """Asymmetric squared loss of a scalar or array residual."""
    values, _ = AsymmetricLoss(kappa_under, kappa_over)(residual)
    return float(values) if np.ndim(values) == 0 else values


SQUARED = SquaredLoss()
