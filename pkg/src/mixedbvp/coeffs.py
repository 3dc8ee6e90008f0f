"""Coefficient bundles and the admissibility conditions they must satisfy.

A CoefficientSet fixes the operator

    L u = eps*K*u_xx + u_yy + eps*A*u_x + eps*B*u_y

together with the oblique-derivative constant alpha.  Three pointwise
checks gate the solver: the interior sign condition on K_y, the strict
lower bound on alpha^2 at the bottom wall, and the directional-derivative
condition on a raw curvature field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, GridSpec, differentiate


@dataclass
class CoefficientSet:
    K: Field
    A: Field
    B: Field
    eps: float
    alpha: float

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        g = self.K.grid
        if self.A.grid != g or self.B.grid != g:
            raise ValueError("K, A, B must share one grid")

    @property
    def grid(self) -> GridSpec:
        return self.K.grid

    @property
    def k_changes_sign(self) -> bool:
        """Informational: does K take both signs (or vanish) on the grid?"""
        v = self.K.values
        return bool(v.min() <= 0.0 <= v.max())


@dataclass
class ConditionReport:
    condition_name: str
    pointwise_min_margin: float
    argmin_location: tuple[float, float]
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        x, y = self.argmin_location
        return (
            f"{self.condition_name}: {status}  min margin {self.pointwise_min_margin:.6e}"
            f" at (x,y)=({x:+.4f},{y:+.4f})"
        )


def _min_report(name: str, margin: np.ndarray, grid: GridSpec, strict: bool) -> ConditionReport:
    flat = int(np.argmin(margin))
    i, j = np.unravel_index(flat, margin.shape)
    mn = float(margin[i, j])
    passed = mn > 0.0 if strict else mn >= 0.0
    return ConditionReport(name, mn, (float(grid.x[i]), float(grid.y[j])), passed)


def check_condition7(cs: CoefficientSet) -> ConditionReport:
    """Interior sign condition K_y - alpha*K_x + 2*alpha*A >= eps^{1/4}(|K_x|+|K|+|A|)."""
    Kx = differentiate(cs.K, "x", 1).values
    Ky = differentiate(cs.K, "y", 1).values
    K, A = cs.K.values, cs.A.values
    margin = (
        Ky
        - cs.alpha * Kx
        + 2.0 * cs.alpha * A
        - cs.eps**0.25 * (np.abs(Kx) + np.abs(K) + np.abs(A))
    )
    return _min_report("condition7", margin, cs.grid, strict=False)


def check_alpha(cs: CoefficientSet) -> ConditionReport:
    """Strict bottom-wall condition alpha^2 > -eps * min_x K(x,-1)."""
    kmin = float(cs.K.values[:, 0].min())
    margin = cs.alpha**2 + cs.eps * kmin
    i = int(np.argmin(cs.K.values[:, 0]))
    return ConditionReport(
        "alpha_condition",
        margin,
        (float(cs.grid.x[i]), -1.0),
        margin > 0.0,
    )


def condition7prime_margin(K: Field, V: tuple[Field, Field], eps: float) -> Field:
    """Margin field of the directional condition grad_V K >= eps(|grad K| + |K|)."""
    Kx = differentiate(K, "x", 1).values
    Ky = differentiate(K, "y", 1).values
    V1, V2 = V
    margin = (
        V1.values * Kx
        + V2.values * Ky
        - eps * (np.sqrt(Kx**2 + Ky**2) + np.abs(K.values))
    )
    return Field(K.grid, margin)


def check_condition7prime(K: Field, V: tuple[Field, Field], eps: float) -> ConditionReport:
    margin = condition7prime_margin(K, V, eps)
    return _min_report("condition7prime", margin.values, K.grid, strict=False)


# ---------------------------------------------------------------------------
# coefficient presets
# ---------------------------------------------------------------------------

def _flat_exp(t: np.ndarray) -> np.ndarray:
    """exp(-1/t) for t > 0, identically 0 for t <= 0 (infinite-order flat)."""
    out = np.zeros_like(t)
    pos = t > 0
    with np.errstate(divide="ignore", over="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def _tricomi(X, Y):
    return Y


def _infinite_order(X, Y):
    return _flat_exp(Y) - _flat_exp(-Y)


def _wedge(X, Y):
    # wall slope kept below ~0.5 so the finite-difference margin of the
    # interior sign condition stays positive through the flat transition
    w = 0.15 * (1.0 - np.cos(np.pi * X))
    return _flat_exp(Y - w) - _flat_exp(-Y - w)


def _chaplygin(X, Y):
    return np.sinh(Y)


PRESET_NAMES = ("tricomi", "infinite_order", "wedge", "chaplygin", "lower_order")


def preset_coefficients(name: str, grid: GridSpec, eps: float, alpha: float) -> CoefficientSet:
    """Build one of the named coefficient families on the given grid.

    CSV-backed coefficients use the form "csv:<path>" and load K from a
    Field file (A = B = 0).
    """
    zero = Field.zeros(grid)
    if name == "tricomi":
        return CoefficientSet(Field.from_function(grid, _tricomi), zero, zero, eps, alpha)
    if name == "infinite_order":
        return CoefficientSet(
            Field.from_function(grid, _infinite_order), zero, zero, eps, alpha
        )
    if name == "wedge":
        return CoefficientSet(Field.from_function(grid, _wedge), zero, zero, eps, alpha)
    if name == "chaplygin":
        return CoefficientSet(
            Field.from_function(grid, _chaplygin), zero, zero, eps, alpha
        )
    if name == "lower_order":
        K = Field.from_function(
            grid, lambda X, Y: Y + 0.15 * np.sin(np.pi * X) * np.cos(0.5 * np.pi * Y)
        )
        A = Field.from_function(grid, lambda X, Y: 0.1 * np.cos(np.pi * X))
        B = Field.from_function(grid, lambda X, Y: 0.05 * (1.0 + Y) * np.sin(np.pi * X))
        return CoefficientSet(K, A, B, eps, alpha)
    if name.startswith("csv:"):
        from .grid import load_field

        K = load_field(name[4:])
        zg = Field.zeros(K.grid)
        return CoefficientSet(K, zg, zg, eps, alpha)
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES} or csv:<path>")
