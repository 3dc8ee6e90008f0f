"""Linear BVP solver, manufactured-solution verification, energy certificates.

solve_linear factors the assembled operator once and back-substitutes;
the a priori constant of the well-posedness estimate is reported as the
measured ratio ||u||_{H^m} / ||f||_{H^{m+1}}.  energy_certificate drives
the duality chain: for adjoint-admissible samples v it solves the
auxiliary problem M u = v and tests positivity of (L* v, u) against the
anisotropic (m,1) energy of u, then reports the measured constant of the
negative-norm inequality that yields existence of weak solutions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .coeffs import CoefficientSet, check_alpha, check_condition7
from .grid import (
    Field,
    GridSpec,
    boundary_integral,
    differentiate,
    inner_product,
    l2_norm,
)
from .multiplier import FormEntry, FormReport, MultiplierTriple, a_y_field
from .norms import NormOrder, isotropic_norm, negative_norm, sobolev_norm
from .operators import (
    BoundarySpec,
    apply_L,
    apply_Lstar,
    assemble_L,
    aux_solve_report,
)


class PreconditionError(RuntimeError):
    pass


class BoundaryCompatibilityError(ValueError):
    pass


@dataclass
class LinearProblem:
    cs: CoefficientSet
    f: Field
    boundary: BoundarySpec | None = None

    def __post_init__(self):
        if self.f.grid != self.cs.grid:
            raise ValueError("right-hand side must share the coefficient grid")
        if self.boundary is None:
            self.boundary = BoundarySpec("oblique", self.cs.alpha)


@dataclass
class SolveReport:
    u: Field
    residual_norm: float
    apriori_ratio: float
    solver_stats: dict = dc_field(default_factory=dict)


@dataclass
class ConvergenceRow:
    h: float
    error_l2: float
    error_h01: float
    observed_order: float | None


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = dc_field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["h,error_l2,error_h01,observed_order"]
        for r in self.rows:
            order = "" if r.observed_order is None else f"{r.observed_order:.4f}"
            lines.append(f"{r.h:.8e},{r.error_l2:.8e},{r.error_h01:.8e},{order}")
        return "\n".join(lines)

    @property
    def orders(self) -> list[float]:
        return [r.observed_order for r in self.rows if r.observed_order is not None]


class FactorizedOperator:
    """Cached LU factorization of the assembled operator for many right sides."""

    def __init__(self, cs: CoefficientSet):
        self.cs = cs
        self.op = assemble_L(cs)
        self._lu = spla.splu(self.op.matrix.tocsc())

    def solve(self, f: Field) -> Field:
        rhs = f.values.copy()
        rhs[:, -1] = 0.0
        rhs[:, 0] = 0.0
        sol = self._lu.solve(rhs.ravel())
        return Field(self.cs.grid, sol.reshape(self.cs.grid.shape))

    def interior_residual(self, u: Field, f: Field) -> float:
        """Quadrature norm of the matrix residual over the interior rows."""
        g = self.cs.grid
        res = (self.op.matrix @ u.values.ravel()).reshape(g.shape) - f.values
        res[:, 0] = 0.0
        res[:, -1] = 0.0
        return l2_norm(Field(g, res))


def solve_linear(
    p: LinearProblem,
    m_order: int = 0,
    *,
    require_conditions: bool = True,
    tol: float = 1e-10,
) -> SolveReport:
    """Direct sparse solve of the closed boundary value problem.

    The admissibility gates are checked first; require_conditions=False
    downgrades a failed gate to a warning for counterexample probing.
    A singular factorization is surfaced as WELLPOSEDNESS_SUSPECT.
    """
    for rep in (check_condition7(p.cs), check_alpha(p.cs)):
        if not rep.passed:
            if require_conditions:
                raise PreconditionError(str(rep))
            warnings.warn(f"proceeding despite failed gate: {rep}", stacklevel=2)
    try:
        fac = FactorizedOperator(p.cs)
        u = fac.solve(p.f)
    except RuntimeError as exc:  # singular factorization
        raise PreconditionError(f"WELLPOSEDNESS_SUSPECT: {exc}") from exc

    res = fac.interior_residual(u, p.f)
    fnorm = l2_norm(p.f)
    if fnorm > 0 and res > tol * fnorm:
        raise PreconditionError(
            f"WELLPOSEDNESS_SUSPECT: solve residual {res / fnorm:.2e} exceeds {tol:.1e}"
        )
    fden = isotropic_norm(p.f, min(m_order + 1, 2))
    ratio = isotropic_norm(u, m_order) / fden if fden > 0 else 0.0
    return SolveReport(
        u,
        res,
        ratio,
        {"method": "splu", "n": int(np.prod(p.cs.grid.shape)), "m_order": m_order},
    )


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------

@dataclass
class ManufacturedSolution:
    """Closed-form trial solution with the analytic derivatives L needs."""

    u: Callable
    ux: Callable
    uy: Callable
    uxx: Callable
    uyy: Callable

    def sample(self, grid: GridSpec) -> Field:
        return Field.from_function(grid, self.u)

    def forcing(self, cs: CoefficientSet) -> Field:
        """f = eps*K*uxx + uyy + eps*A*ux + eps*B*uy with analytic derivatives."""
        X, Y = cs.grid.meshes()
        vals = (
            cs.eps * cs.K.values * self.uxx(X, Y)
            + self.uyy(X, Y)
            + cs.eps * cs.A.values * self.ux(X, Y)
            + cs.eps * cs.B.values * self.uy(X, Y)
        )
        return Field(cs.grid, vals)

    def check_boundary(self, grid: GridSpec, alpha: float, tol: float = 1e-8) -> None:
        x = grid.x
        top = np.abs(self.u(x, np.ones_like(x)))
        bottom = np.abs(
            alpha * self.ux(x, -np.ones_like(x)) + self.uy(x, -np.ones_like(x))
        )
        scale = max(1.0, float(np.max(np.abs(self.u(*grid.meshes())))))
        if top.max() > tol * scale or bottom.max() > tol * scale:
            raise BoundaryCompatibilityError(
                f"manufactured solution violates boundary conditions "
                f"(top {top.max():.2e}, bottom {bottom.max():.2e})"
            )


def polynomial_sine_solution() -> ManufacturedSolution:
    """sin(pi x) * (1 - y)(1 + y)^2: kills both boundary rows for every alpha."""

    def g(y):
        return 1.0 + y - y**2 - y**3

    def gp(y):
        return 1.0 - 2.0 * y - 3.0 * y**2

    def gpp(y):
        return -2.0 - 6.0 * y

    pi = np.pi
    return ManufacturedSolution(
        u=lambda x, y: np.sin(pi * x) * g(y),
        ux=lambda x, y: pi * np.cos(pi * x) * g(y),
        uy=lambda x, y: np.sin(pi * x) * gp(y),
        uxx=lambda x, y: -(pi**2) * np.sin(pi * x) * g(y),
        uyy=lambda x, y: np.sin(pi * x) * gpp(y),
    )


def mms_convergence(
    cs_factory: Callable[[GridSpec], CoefficientSet],
    u_star: ManufacturedSolution,
    grids: list[GridSpec],
    *,
    require_conditions: bool = False,
) -> ConvergenceTable:
    """Refinement study against a manufactured solution.

    cs_factory rebuilds the coefficient fields on each grid; the forcing
    is evaluated from the analytic derivatives of u_star, never from
    finite differences of the sampled trial solution.
    """
    u_star.check_boundary(grids[-1], cs_factory(grids[0]).alpha)
    table = ConvergenceTable()
    prev = None
    for g in grids:
        cs = cs_factory(g)
        f = u_star.forcing(cs)
        rep = solve_linear(LinearProblem(cs, f), require_conditions=require_conditions)
        exact = u_star.sample(g)
        diff = Field(g, rep.u.values - exact.values)
        e2 = l2_norm(diff)
        eh = sobolev_norm(diff, NormOrder(0, 1))
        h = max(g.hx, g.hy)
        order = None
        if prev is not None and e2 > 0 and prev[1] > 0:
            order = float(np.log2(prev[1] / e2) / np.log2(prev[0] / h))
        table.rows.append(ConvergenceRow(h, e2, eh, order))
        prev = (h, e2)
    return table


# ---------------------------------------------------------------------------
# admissible sample fields
# ---------------------------------------------------------------------------

def _bottom_corrector(grid: GridSpec) -> tuple[np.ndarray, float]:
    """Profile chi with chi(-1) = chi(1) = 0 plus its discrete y-derivative at -1."""
    from .operators import _BOTTOM_DY

    y = grid.y
    chi = -(1.0 + y) * (1.0 - y) ** 2 / 4.0
    d0 = float(chi[:4] @ _BOTTOM_DY / grid.hy)
    return chi, d0


def _enforce_boundary(grid: GridSpec, w: np.ndarray, alpha: float, sign: float) -> Field:
    """Project w onto the discrete kernel of the bottom condition.

    sign=+1 enforces alpha*u_x + u_y = 0, sign=-1 the adjoint version;
    the top row is forced to zero exactly.
    """
    from .operators import _BOTTOM_DY

    w = w.copy()
    w[:, -1] = 0.0
    chi, d0 = _bottom_corrector(grid)
    ux0 = (np.roll(w[:, 0], -1) - np.roll(w[:, 0], 1)) / (2.0 * grid.hx)
    uy0 = w[:, :4] @ _BOTTOM_DY / grid.hy
    r = alpha * ux0 + sign * uy0
    w -= np.outer(r, chi) * (sign / d0)
    return Field(grid, w)


def random_smooth_samples(
    grid: GridSpec,
    alpha: float,
    n: int,
    seed: int,
    *,
    adjoint: bool = True,
    kmax: int = 4,
) -> list[Field]:
    """Seeded smooth fields satisfying the (adjoint) boundary conditions discretely.

    Tensor products of low-order Fourier modes in x and random cubics in
    y with a top zero factor, then a bottom boundary corrector.
    """
    rng = np.random.default_rng(seed)
    X, Y = grid.meshes()
    sign = -1.0 if adjoint else 1.0
    out = []
    for _ in range(n):
        w = np.zeros(grid.shape)
        for k in range(kmax + 1):
            ak, bk = rng.standard_normal(2) / (1 + k)
            coef = rng.standard_normal(4)
            poly = (1.0 - Y) * (
                coef[0] + coef[1] * Y + coef[2] * Y**2 + coef[3] * Y**3
            )
            w += (ak * np.sin(np.pi * k * X) + bk * np.cos(np.pi * k * X)) * poly
        out.append(_enforce_boundary(grid, w, alpha, sign))
    return out


# ---------------------------------------------------------------------------
# energy certificate
# ---------------------------------------------------------------------------

@dataclass
class EnergySample:
    ratio: float
    dual_constant: float
    aux_iterations: int


def energy_certificate(
    cs: CoefficientSet,
    mt: MultiplierTriple,
    v_samples: list[Field],
) -> tuple[FormReport, list[EnergySample]]:
    """Measure (L* v, u) / ||u||^2_(m,1) over admissible samples v, u = M^{-1} v.

    Also reports the measured constant of ||v||_(-m-1,0) <=
    C^2 ||L* v||_(-m,-1).  Zero samples are skipped; positivity of every
    ratio is the certificate.
    """
    m = mt.m
    samples: list[EnergySample] = []
    for v in v_samples:
        if l2_norm(v) == 0.0:
            continue
        aux = aux_solve_report(v, mt)
        u = aux.u
        lsv = apply_Lstar(cs, v)
        num = inner_product(lsv, u)
        den = sobolev_norm(u, NormOrder(m, 1)) ** 2
        ratio = num / den if den > 0 else np.inf
        neg_v = negative_norm(v, NormOrder(-(m + 1), 0))
        neg_lsv = negative_norm(lsv, NormOrder(-m, -1))
        dual = neg_v / neg_lsv if neg_lsv > 0 else np.inf
        samples.append(EnergySample(ratio, dual, aux.iterations))

    ratios = np.array([s.ratio for s in samples])
    duals = np.array([s.dual_constant for s in samples])
    report = FormReport()
    report.add(
        "energy_ratio",
        FormEntry(float(ratios.min()), float(ratios.max()), 0.0, bool(ratios.min() > 0)),
    )
    report.add(
        "dual_chain_Csq",
        FormEntry(float(duals.min()), float(duals.max()), 0.0, bool(np.isfinite(duals).all())),
    )
    return report, samples


# ---------------------------------------------------------------------------
# energy identity and uniqueness mirror
# ---------------------------------------------------------------------------

def identity18_residual(cs: CoefficientSet, mt: MultiplierTriple, u: Field) -> float:
    """|LHS - RHS| of the integrated multiplier identity for a field with Bu = 0.

    LHS is the quadrature pairing (a u_x + b u_y + c u, L u); RHS is the
    term-by-term evaluation of the interior quadratic form plus the
    n2-boundary integrals (n1 terms drop by periodicity).
    """
    g = cs.grid
    eps = cs.eps
    a, b, c = mt.a.values, mt.b.values, mt.c.values
    K, A, B = cs.K.values, cs.A.values, cs.B.values

    ux = differentiate(u, "x", 1).values
    uy = differentiate(u, "y", 1).values
    lu = apply_L(cs, u)
    mult = Field(g, a * ux + b * uy + c * u.values)
    lhs = inner_product(mult, lu)

    def dx(vals, order=1):
        return differentiate(Field(g, vals), "x", order).values

    def dy(vals, order=1):
        return differentiate(Field(g, vals), "y", order).values

    g1 = dy(b * K) - 2.0 * c * K - dx(a * K) + 2.0 * a * A
    gmix = b * A - dx(b * K) - a_y_field(mt, cs).values / eps - a * B
    g2 = (dx(a) - dy(b) - 2.0 * c) / eps + 2.0 * b * B
    g0 = dx(c * K, 2) + dy(c, 2) / eps - dx(c * A) - dy(c * B)

    interior = eps * (
        inner_product(Field(g, 0.5 * g1 * ux), Field(g, ux))
        + inner_product(Field(g, gmix * ux), Field(g, uy))
        + inner_product(Field(g, 0.5 * g2 * uy), Field(g, uy))
        + inner_product(Field(g, 0.5 * g0 * u.values), Field(g, u.values))
    )

    cy = dy(c)
    uu = u.values
    # n2-signed boundary integrand, evaluated on each wall row
    integrand = (
        -0.5 * eps * b * K * ux**2
        + a * ux * uy
        + 0.5 * b * uy**2
        + c * uu * uy
        + 0.5 * (eps * c * B - cy) * uu**2
    )
    wall = Field(g, integrand)
    rhs = interior + boundary_integral(wall, "top") - boundary_integral(wall, "bottom")
    return abs(lhs - rhs)


def uniqueness_boundary_form(cs: CoefficientSet, mt: MultiplierTriple, u: Field) -> float:
    """Boundary quadratic expression of the uniqueness argument (nonnegative)."""
    g = cs.grid
    eps, alpha = cs.eps, cs.alpha
    uy = differentiate(u, "y", 1).values
    ux = differentiate(u, "x", 1).values
    cy = differentiate(mt.c, "y", 1).values
    cx = differentiate(mt.c, "x", 1).values
    a, b, c = mt.a.values, mt.b.values, mt.c.values
    K, B = cs.K.values, cs.B.values

    top = Field(g, 0.5 * b * uy**2)
    bottom = Field(
        g,
        0.5 * (eps * b * K + 2.0 * alpha * a - alpha**2 * b) * ux**2
        + 0.5 * (cy - alpha * cx - eps * c * B) * u.values**2,
    )
    return boundary_integral(top, "top") + boundary_integral(bottom, "bottom")
