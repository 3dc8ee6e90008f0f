"""Discrete operators: assembly, adjoint pairing, transport, auxiliary solve.

The second-order operator and its formal adjoint are assembled as sparse
matrices with centered 3-point stencils per direction (at most 9 entries
per row), Dirichlet top row, and a second-order one-sided discretization
of the oblique condition on the bottom row.  The first-order transport
solver marches downward from y = 1 with semi-Lagrangian steps and cubic
periodic interpolation in x, which keeps the march stable for any
characteristic slope a/b.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from math import comb

import numpy as np
import scipy.sparse as sp

from .coeffs import CoefficientSet
from .grid import Field, GridSpec, boundary_integral, inner_product, l2_norm
from .multiplier import MultiplierTriple


class TransportError(ValueError):
    pass


class AuxNonContractionError(RuntimeError):
    def __init__(self, ratio: float):
        super().__init__(
            f"auxiliary iteration is not contracting (increment ratio {ratio:.3f});"
            " increase lambda"
        )
        self.ratio = ratio


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary encoding: Dirichlet top, oblique bottom, periodic x."""

    bottom: str  # "oblique" (alpha*u_x + u_y = 0) or "adjoint_oblique" (alpha*v_x - v_y = 0)
    alpha: float
    top: str = "dirichlet_zero"

    def __post_init__(self):
        if self.bottom not in ("oblique", "adjoint_oblique"):
            raise ValueError(f"unsupported bottom condition {self.bottom!r}")
        if self.top != "dirichlet_zero":
            raise ValueError(f"unsupported top condition {self.top!r}")


# third-order one-sided first-derivative weights used by the oblique rows
_BOTTOM_DY = np.array([-11.0, 18.0, -9.0, 2.0]) / 6.0


@dataclass
class DiscreteOperator:
    matrix: sp.csr_matrix = dc_field(repr=False)
    boundary: BoundarySpec
    grid: GridSpec

    def export_coo(self, path) -> None:
        """Write the matrix as plain 'row col value' lines."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _assemble(
    grid: GridSpec,
    K: np.ndarray,
    Ax: np.ndarray,
    By: np.ndarray,
    zero_order: np.ndarray,
    eps: float,
    boundary: BoundarySpec,
) -> sp.csr_matrix:
    """Shared assembly for eps*K*u_xx + u_yy + eps*Ax*u_x + eps*By*u_y + z*u."""
    nx, nyp = grid.shape
    hx, hy = grid.hx, grid.hy
    alpha = boundary.alpha

    rows, cols, vals = [], [], []

    def idx(i, j):
        return (i % nx) * nyp + j

    I, J = np.meshgrid(np.arange(nx), np.arange(1, nyp - 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    Kf = K[I, J]
    Af = Ax[I, J]
    Bf = By[I, J]
    Zf = zero_order[I, J]
    center = idx(I, J)

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    add(center, idx(I + 1, J), eps * Kf / hx**2 + eps * Af / (2 * hx))
    add(center, idx(I - 1, J), eps * Kf / hx**2 - eps * Af / (2 * hx))
    add(center, idx(I, J + 1), np.full_like(Kf, 1.0 / hy**2) + eps * Bf / (2 * hy))
    add(center, idx(I, J - 1), np.full_like(Kf, 1.0 / hy**2) - eps * Bf / (2 * hy))
    add(center, center, -2.0 * eps * Kf / hx**2 - 2.0 / hy**2 + Zf)

    ii = np.arange(nx)
    # top: identity row
    add(idx(ii, nyp - 1), idx(ii, nyp - 1), np.ones(nx))
    # bottom: alpha*u_x +/- u_y with one-sided third-order u_y (the extra
    # order keeps the oblique row from dominating the global error budget)
    sgn = 1.0 if boundary.bottom == "oblique" else -1.0
    add(idx(ii, 0), idx(ii + 1, 0), np.full(nx, alpha / (2 * hx)))
    add(idx(ii, 0), idx(ii - 1, 0), np.full(nx, -alpha / (2 * hx)))
    for j_off, coef in enumerate(_BOTTOM_DY):
        add(idx(ii, 0), idx(ii, j_off), np.full(nx, sgn * coef / hy))

    n = nx * nyp
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def assemble_L(cs: CoefficientSet) -> DiscreteOperator:
    """Discrete eps*K*u_xx + u_yy + eps*A*u_x + eps*B*u_y with its boundary rows."""
    bc = BoundarySpec("oblique", cs.alpha)
    zero = np.zeros(cs.grid.shape)
    mat = _assemble(cs.grid, cs.K.values, cs.A.values, cs.B.values, zero, cs.eps, bc)
    return DiscreteOperator(mat, bc, cs.grid)


def _adjoint_pieces(cs: CoefficientSet):
    from .grid import differentiate

    Kx = differentiate(cs.K, "x", 1).values
    Kxx = differentiate(cs.K, "x", 2).values
    Axd = differentiate(cs.A, "x", 1).values
    Byd = differentiate(cs.B, "y", 1).values
    first_x = 2.0 * Kx - cs.A.values
    first_y = -cs.B.values
    zero_order = cs.eps * (Kxx - Axd - Byd)
    return first_x, first_y, zero_order


def assemble_Lstar(cs: CoefficientSet) -> DiscreteOperator:
    """Formal adjoint with the adjoint oblique condition alpha*v_x - v_y = 0."""
    bc = BoundarySpec("adjoint_oblique", cs.alpha)
    first_x, first_y, zero_order = _adjoint_pieces(cs)
    mat = _assemble(cs.grid, cs.K.values, first_x, first_y, zero_order, cs.eps, bc)
    return DiscreteOperator(mat, bc, cs.grid)


# ---------------------------------------------------------------------------
# differential application (all rows, one-sided at the walls)
# ---------------------------------------------------------------------------

def _d1x3(v: np.ndarray, hx: float) -> np.ndarray:
    return (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2.0 * hx)


def _d2x3(v: np.ndarray, hx: float) -> np.ndarray:
    return (np.roll(v, -1, axis=0) - 2.0 * v + np.roll(v, 1, axis=0)) / (hx * hx)


def apply_L(cs: CoefficientSet, u: Field) -> Field:
    """Pointwise application of the operator at every node (no boundary rows).

    Uses the same 3-point x-stencils as the assembled matrix; y-stencils
    are the grid module's (one-sided at the walls).
    """
    from .grid import _dy1, _dy2

    g = u.grid
    v = u.values
    out = (
        cs.eps * cs.K.values * _d2x3(v, g.hx)
        + _dy2(v, g.hy)
        + cs.eps * cs.A.values * _d1x3(v, g.hx)
        + cs.eps * cs.B.values * _dy1(v, g.hy)
    )
    return Field(g, out)


def apply_Lstar(cs: CoefficientSet, v: Field) -> Field:
    from .grid import _dy1, _dy2

    g = v.grid
    first_x, first_y, zero_order = _adjoint_pieces(cs)
    w = v.values
    out = (
        cs.eps * cs.K.values * _d2x3(w, g.hx)
        + _dy2(w, g.hy)
        + cs.eps * first_x * _d1x3(w, g.hx)
        + cs.eps * first_y * _dy1(w, g.hy)
        + zero_order * w
    )
    return Field(g, out)


def boundary_residual(u: Field, bc: BoundarySpec) -> tuple[np.ndarray, np.ndarray]:
    """Discrete residuals of the top and bottom conditions (per x-node)."""
    g = u.grid
    top = u.values[:, -1].copy()
    uy0 = u.values[:, :4] @ _BOTTOM_DY / g.hy
    ux0 = _d1x3(u.values, g.hx)[:, 0]
    sgn = 1.0 if bc.bottom == "oblique" else -1.0
    bottom = bc.alpha * ux0 + sgn * uy0
    return top, bottom


def adjoint_defect(cs: CoefficientSet, u: Field, v: Field) -> float:
    """(L* v, u) - (v, L u) minus the bottom-wall eps*B*u*v pairing term.

    With the B-term folded into the discrete pairing, the defect tends to
    zero under refinement whenever u satisfies the forward and v the
    adjoint boundary conditions.
    """
    lhs = inner_product(apply_Lstar(cs, v), u) - inner_product(v, apply_L(cs, u))
    buv = Field(cs.grid, cs.B.values * u.values * v.values)
    return lhs - cs.eps * boundary_integral(buv, "bottom")


# ---------------------------------------------------------------------------
# semi-Lagrangian transport
# ---------------------------------------------------------------------------

def _interp_periodic(row: np.ndarray, pos: np.ndarray, hx: float) -> np.ndarray:
    """Cubic Lagrange interpolation of a periodic nodal row at positions pos."""
    nx = row.shape[0]
    t = (pos + 1.0) / hx
    i1 = np.floor(t).astype(int)
    s = t - i1
    w_m1 = -s * (s - 1.0) * (s - 2.0) / 6.0
    w_0 = (s * s - 1.0) * (s - 2.0) / 2.0
    w_p1 = -s * (s + 1.0) * (s - 2.0) / 2.0
    w_p2 = s * (s * s - 1.0) / 6.0
    return (
        w_m1 * row[(i1 - 1) % nx]
        + w_0 * row[i1 % nx]
        + w_p1 * row[(i1 + 1) % nx]
        + w_p2 * row[(i1 + 2) % nx]
    )


def transport_solve(
    a: Field,
    b: Field,
    c: Field,
    rhs: Field,
    top: np.ndarray | None = None,
) -> Field:
    """Solve a*w_x + b*w_y + c*w = rhs with w(x, 1) = top (default 0).

    Marches from y = 1 downward; per step the characteristic foot on the
    upper level is located with a Heun predictor and the ODE along the
    characteristic is closed with the trapezoid rule, giving second-order
    accuracy in hy.
    """
    g = a.grid
    bvals = b.values
    if np.any(bvals == 0.0) or (bvals.min() < 0.0 < bvals.max()):
        raise TransportError("b must be nonzero of one sign throughout the cylinder")
    at = a.values / bvals
    ct = c.values / bvals
    rt = rhs.values / bvals
    hx, hy = g.hx, g.hy
    x = g.x
    beta = 0.5 * hy

    w = np.empty(g.shape)
    w[:, -1] = 0.0 if top is None else np.asarray(top, dtype=float)
    for j in range(g.ny - 1, -1, -1):
        k1 = at[:, j]
        k2 = _interp_periodic(at[:, j + 1], x + hy * k1, hx)
        foot = x + beta * (k1 + k2)
        wf = _interp_periodic(w[:, j + 1], foot, hx)
        cf = _interp_periodic(ct[:, j + 1], foot, hx)
        rf = _interp_periodic(rt[:, j + 1], foot, hx)
        w[:, j] = (wf * (1.0 + beta * cf) - beta * (rt[:, j] + rf)) / (
            1.0 - beta * ct[:, j]
        )
    return Field(g, w)


def _transport_equation_residual(
    a: Field, b: Field, c: Field, rhs: Field, w: Field
) -> Field:
    """Residual of the discrete transport recurrence, per unit hy."""
    g = a.grid
    at = a.values / b.values
    ct = c.values / b.values
    rt = rhs.values / b.values
    hx, hy = g.hx, g.hy
    x = g.x
    beta = 0.5 * hy
    res = np.zeros(g.shape)
    for j in range(g.ny - 1, -1, -1):
        k1 = at[:, j]
        k2 = _interp_periodic(at[:, j + 1], x + hy * k1, hx)
        foot = x + beta * (k1 + k2)
        wf = _interp_periodic(w.values[:, j + 1], foot, hx)
        cf = _interp_periodic(ct[:, j + 1], foot, hx)
        rf = _interp_periodic(rt[:, j + 1], foot, hx)
        res[:, j] = (
            w.values[:, j] * (1.0 - beta * ct[:, j])
            - wf * (1.0 + beta * cf)
            + beta * (rt[:, j] + rf)
        ) / hy
    return Field(g, res)


# ---------------------------------------------------------------------------
# auxiliary operator M and its fixed-point iteration
# ---------------------------------------------------------------------------

def _wavenumbers(grid: GridSpec) -> np.ndarray:
    # modes exp(i pi n x) on the period-2 cylinder
    return np.pi * np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)


def _spectral_dx(vals: np.ndarray, xi: np.ndarray, power: int) -> np.ndarray:
    spec = np.fft.fft(vals, axis=0) * (1j * xi[:, None]) ** power
    return np.real(np.fft.ifft(spec, axis=0))


def _recovery_denominator(grid: GridSpec, lam: float, m: int) -> np.ndarray:
    xi = _wavenumbers(grid)
    return sum(lam**-s * xi ** (2 * s) for s in range(m + 1))


def _coupling_rhs(u_vals: np.ndarray, a: Field, lam: float, m: int) -> np.ndarray:
    """Lagged terms sum_{s,l>=1} C(s,l) (-1)^s lam^-s (d_x^l a)(d_x^{2s-l+1} u)."""
    if m == 0:
        return np.zeros_like(u_vals)
    g = a.grid
    xi = _wavenumbers(g)
    out = np.zeros_like(u_vals)
    for s in range(1, m + 1):
        for l in range(1, s + 1):
            da = _spectral_dx(a.values, xi, l)
            du = _spectral_dx(u_vals, xi, 2 * s - l + 1)
            out += comb(s, l) * (-1.0) ** s * lam**-s * da * du
    return out


@dataclass
class AuxReport:
    u: Field
    iterations: int
    increments: list[float]
    ratios: list[float]
    converged: bool

    @property
    def contraction_ratio(self) -> float:
        """Representative measured ratio of successive increments."""
        return max(self.ratios) if self.ratios else 0.0


def aux_solve_report(
    v: Field,
    mt: MultiplierTriple,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> AuxReport:
    """Fixed-point solve of the auxiliary problem M u = v with u(x,1) = 0.

    Each pass transports the collapsed unknown w = sum_s (-1)^s lam^-s
    d_x^{2s} u downward and recovers u per Fourier mode through the
    symbol sum_s lam^-s (pi k)^{2s} >= 1.  The only coupling between
    passes runs through x-derivatives of a, so x-independent multipliers
    converge immediately.
    """
    g = v.grid
    denom = _recovery_denominator(g, mt.lam, mt.m)[:, None]

    def recover(w: Field) -> np.ndarray:
        return np.real(np.fft.ifft(np.fft.fft(w.values, axis=0) / denom, axis=0))

    if mt.m == 0:
        w = transport_solve(mt.a, mt.b, mt.c, v)
        return AuxReport(Field(g, w.values.copy()), 1, [], [], True)

    u_vals = np.zeros(g.shape)
    increments: list[float] = []
    ratios: list[float] = []
    ref = None
    bad_streak = 0
    for it in range(1, max_iter + 1):
        rhs = Field(g, v.values - _coupling_rhs(u_vals, mt.a, mt.lam, mt.m))
        w = transport_solve(mt.a, mt.b, mt.c, rhs)
        new_vals = recover(w)
        delta = l2_norm(Field(g, new_vals - u_vals))
        increments.append(delta)
        if len(increments) >= 2 and increments[-2] > 0:
            ratio = delta / increments[-2]
            ratios.append(ratio)
            bad_streak = bad_streak + 1 if ratio >= 1.0 else 0
            if bad_streak >= 5:
                raise AuxNonContractionError(ratio)
        u_vals = new_vals
        if ref is None:
            ref = max(delta, np.finfo(float).tiny)
        if delta <= tol * ref:
            return AuxReport(Field(g, u_vals), it, increments, ratios, True)
    return AuxReport(Field(g, u_vals), max_iter, increments, ratios, False)


def aux_solve(v: Field, mt: MultiplierTriple, **kwargs) -> Field:
    return aux_solve_report(v, mt, **kwargs).u


def aux_equation_residual(u: Field, v: Field, mt: MultiplierTriple) -> float:
    """Relative residual of the discrete auxiliary equation at u.

    Reconstructs w from u through the recovery symbol, rebuilds the
    right-hand side including the lagged coupling, and evaluates the
    transport recurrence residual; small values certify that u is the
    fixed point of the discretized problem.
    """
    g = u.grid
    denom = _recovery_denominator(g, mt.lam, mt.m)[:, None]
    w = Field(g, np.real(np.fft.ifft(np.fft.fft(u.values, axis=0) * denom, axis=0)))
    rhs = Field(g, v.values - _coupling_rhs(u.values, mt.a, mt.lam, mt.m))
    res = _transport_equation_residual(mt.a, mt.b, mt.c, rhs, w)
    scale = l2_norm(v)
    return l2_norm(res) / scale if scale > 0 else l2_norm(res)
