"""Convex regularizers with closed-form proximal operators.

Three kinds are shipped: the l1 norm, the squared l2 norm, and the zero
function.  Together they cover both admissible subgradient-growth regimes
(bounded subgradients, and subgradients bounded by a multiple of ``|x|``)
while every prox stays closed-form, so no inner solver tolerance leaks into
the forward dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import NumericsError

# Subgradient growth regimes: either ||g|| <= M * ||x|| or ||g|| <= M.
GROWTH_LINEAR = "linear"
GROWTH_BOUNDED = "bounded"

_KINDS = ("l1", "squared_l2", "zero")


@dataclass(frozen=True)
class Regularizer:
    """A convex penalty ``scale * base(x)`` with prox and subgradient access.

    kind: one of "l1" (base = sum |x_i|), "squared_l2" (base = ||x||_2^2),
        or "zero".
    scale: positive multiplier on the base function.
    """

    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}; expected one of {_KINDS}")
        if not (self.scale > 0) and self.kind != "zero":
            raise ValueError("scale must be positive")

    @property
    def growth_case(self) -> str:
        if self.kind == "squared_l2":
            return GROWTH_LINEAR
        # l1 has globally bounded subgradients; zero fits either case.
        return GROWTH_BOUNDED

    def growth_constant(self, n: int) -> float:
        """Bound constant M for dimension n: ||g|| <= M (bounded case) or
        ||g|| <= M ||x|| (linear case)."""
        if self.kind == "l1":
            return float(np.sqrt(n) * self.scale)
        if self.kind == "squared_l2":
            return 2.0 * self.scale
        return 0.0

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "l1":
            return float(self.scale * np.sum(np.abs(x)))
        if self.kind == "squared_l2":
            return float(self.scale * np.dot(x, x))
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "Regularizer":
        return cls(kind=d["kind"], scale=float(d.get("scale", 1.0)))


def _check_finite(x, what="input"):
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"non-finite {what}")


def prox(reg: Regularizer, rho: float, v) -> np.ndarray:
    """Proximal map: argmin_x { R(x) + ||x - v||^2 / (2 rho) }.

    rho = 0 returns v exactly (the resolvent degenerates to the identity).
    """
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    v = np.asarray(v, dtype=float)
    _check_finite(v)
    if rho == 0.0 or reg.kind == "zero":
        return v.copy()
    if reg.kind == "l1":
        t = rho * reg.scale
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    # squared_l2: stationarity 2*s*x + (x - v)/rho = 0
    return v / (1.0 + 2.0 * rho * reg.scale)


def subgrad_select(reg: Regularizer, x) -> np.ndarray:
    """One element of the subdifferential of R at x.

    At l1 kinks (x_i = 0) the minimal-norm element 0 is returned, which also
    keeps 0 in the subdifferential at the origin.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if reg.kind == "l1":
        return reg.scale * np.sign(x)
    if reg.kind == "squared_l2":
        return 2.0 * reg.scale * x
    return np.zeros_like(x)


def prox_rho_continuity_gap(reg: Regularizer, rho: float, drho: float, v) -> float:
    """l2 distance between the prox at rho + drho and at rho.

    Used to probe continuity of the resolvent in the step parameter; both
    rho and rho + drho must be positive.
    """
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if rho + drho <= 0:
        raise ValueError(f"rho + drho must be > 0, got {rho + drho}")
    a = prox(reg, rho + drho, v)
    b = prox(reg, rho, v)
    return float(np.linalg.norm(a - b))
