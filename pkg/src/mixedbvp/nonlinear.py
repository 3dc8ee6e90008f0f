"""Desk-scale local solvers for the prescribed-curvature and Darboux equations.

Both Monge-Ampere-type problems are attacked with a damped
frozen-coefficient Picard iteration: at each step the seconds of the
current graph supply the normal-form coefficients of the linear cylinder
problem, every deviation from that normal form (the mixed u_xy term, the
gradient-factor first-order terms, the Christoffel corrections) stays on
the right-hand side through the full nonlinear residual, and the linear
solve produces the update.  The domain-scale parameter rho plays the
coordinate-rescaling role: it becomes the eps of the linear operator and
sets the oblique constant alpha = sqrt(rho) * alpha0.

Graph heights are generally not periodic across the seam x = +-1, so
this module differentiates with non-periodic stencils that are exact on
quartics; polynomial test surfaces therefore produce machine-zero
residuals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .coeffs import CoefficientSet, condition7prime_margin
from .grid import Field, GridSpec, differentiate, l2_norm
from .solver import LinearProblem, solve_linear


class CurvatureGateError(RuntimeError):
    pass


class DegenerateMetricError(ValueError):
    pass


class DegenerateLinearizationError(RuntimeError):
    pass


@dataclass
class GraphSurface:
    """Graph height on the cylinder grid with its domain-scale parameter."""

    z: Field
    domain_scale: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.domain_scale <= 1.0):
            raise ValueError("domain_scale must lie in (0, 1]")


@dataclass
class MetricData:
    h11: Field
    h12: Field
    h22: Field

    def __post_init__(self):
        det = self.h11.values * self.h22.values - self.h12.values**2
        if np.any(self.h11.values <= 0.0) or np.any(det <= 0.0):
            raise DegenerateMetricError("metric must be positive definite pointwise")

    def inverse(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        det = self.det()
        return self.h22.values / det, -self.h12.values / det, self.h11.values / det

    def det(self) -> np.ndarray:
        return self.h11.values * self.h22.values - self.h12.values**2


@dataclass
class IterationReport:
    iterations: int
    residual_history: list[float]
    converged: bool
    final_z: GraphSurface
    diagnostics: dict = dc_field(default_factory=dict)


@dataclass
class NonlinearParams:
    alpha0: float = 1.2
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 50
    stagnation_window: int = 8
    smoothing_fraction: float = 0.25  # x-mode band kept in each update


# ---------------------------------------------------------------------------
# cubic-exact, non-periodic finite differences for graph quantities
# ---------------------------------------------------------------------------

def _d1_line(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    # fourth order throughout; every stencil is exact on quartics
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * h)
    out[0] = (
        -25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]
    ) / (12.0 * h)
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h)
    out[-2] = (
        3.0 * v[-1] + 10.0 * v[-2] - 18.0 * v[-3] + 6.0 * v[-4] - v[-5]
    ) / (12.0 * h)
    out[-1] = (
        25.0 * v[-1] - 48.0 * v[-2] + 36.0 * v[-3] - 16.0 * v[-4] + 3.0 * v[-5]
    ) / (12.0 * h)
    return np.moveaxis(out, 0, axis)


def _d2_line(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (
        -v[:-4] + 16.0 * v[1:-3] - 30.0 * v[2:-2] + 16.0 * v[3:-1] - v[4:]
    ) / (12.0 * h * h)
    out[0] = (
        35.0 * v[0] - 104.0 * v[1] + 114.0 * v[2] - 56.0 * v[3] + 11.0 * v[4]
    ) / (12.0 * h * h)
    out[1] = (
        11.0 * v[0] - 20.0 * v[1] + 6.0 * v[2] + 4.0 * v[3] - v[4]
    ) / (12.0 * h * h)
    out[-2] = (
        11.0 * v[-1] - 20.0 * v[-2] + 6.0 * v[-3] + 4.0 * v[-4] - v[-5]
    ) / (12.0 * h * h)
    out[-1] = (
        35.0 * v[-1] - 104.0 * v[-2] + 114.0 * v[-3] - 56.0 * v[-4] + 11.0 * v[-5]
    ) / (12.0 * h * h)
    return np.moveaxis(out, 0, axis)


def graph_dx(u: Field, order: int = 1) -> Field:
    if u.grid.nx < 5:
        raise ValueError("graph differentiation needs at least 5 x-nodes")
    op = _d1_line if order == 1 else _d2_line
    return Field(u.grid, op(u.values, u.grid.hx, 0))


def graph_dy(u: Field, order: int = 1) -> Field:
    op = _d1_line if order == 1 else _d2_line
    return Field(u.grid, op(u.values, u.grid.hy, 1))


def cutoff_profile(grid: GridSpec) -> np.ndarray:
    """Smooth even bump in x: identically 1 for |x| <= 1/2, 0 for |x| >= 3/4."""
    s = np.clip((np.abs(grid.x) - 0.5) / 0.25, 0.0, 1.0)
    smooth = s**4 * (35.0 - 84.0 * s + 70.0 * s**2 - 20.0 * s**3)
    return 1.0 - smooth


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def _hessian(z: Field) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zxx = graph_dx(z, 2).values
    zyy = graph_dy(z, 2).values
    zxy = graph_dy(graph_dx(z, 1), 1).values
    return zxx, zxy, zyy


def curvature_residual(z: GraphSurface, K: Field) -> Field:
    """det D^2 z - K (1 + |grad z|^2)^2, pointwise on the grid."""
    zf = z.z
    zxx, zxy, zyy = _hessian(zf)
    zx = graph_dx(zf, 1).values
    zy = graph_dy(zf, 1).values
    det = zxx * zyy - zxy**2
    grad2 = zx**2 + zy**2
    return Field(zf.grid, det - K.values * (1.0 + grad2) ** 2)


def christoffel_symbols(h: MetricData):
    """The six Christoffel symbols of h from centered metric differences."""
    ih11, ih12, ih22 = h.inverse()
    h11x, h11y = graph_dx(h.h11).values, graph_dy(h.h11).values
    h12x, h12y = graph_dx(h.h12).values, graph_dy(h.h12).values
    h22x, h22y = graph_dx(h.h22).values, graph_dy(h.h22).values
    g1_11 = 0.5 * (ih11 * h11x + ih12 * (2.0 * h12x - h11y))
    g2_11 = 0.5 * (ih12 * h11x + ih22 * (2.0 * h12x - h11y))
    g1_12 = 0.5 * (ih11 * h11y + ih12 * h22x)
    g2_12 = 0.5 * (ih12 * h11y + ih22 * h22x)
    g1_22 = 0.5 * (ih11 * (2.0 * h12y - h22x) + ih12 * h22y)
    g2_22 = 0.5 * (ih12 * (2.0 * h12y - h22x) + ih22 * h22y)
    return g1_11, g2_11, g1_12, g2_12, g1_22, g2_22


def covariant_hessian(z: Field, h: MetricData) -> tuple[Field, Field, Field]:
    """Second covariant derivatives of z in the metric h."""
    g = z.grid
    g1_11, g2_11, g1_12, g2_12, g1_22, g2_22 = christoffel_symbols(h)
    zx = graph_dx(z).values
    zy = graph_dy(z).values
    zxx, zxy, zyy = _hessian(z)
    H11 = zxx - g1_11 * zx - g2_11 * zy
    H12 = zxy - g1_12 * zx - g2_12 * zy
    H22 = zyy - g1_22 * zx - g2_22 * zy
    return Field(g, H11), Field(g, H12), Field(g, H22)


def darboux_residual(z: GraphSurface, K: Field, h: MetricData) -> Field:
    """det(cov Hessian) - K det(h) (1 - |grad_h z|^2)."""
    H11, H12, H22 = covariant_hessian(z.z, h)
    ih11, ih12, ih22 = h.inverse()
    zx = graph_dx(z.z).values
    zy = graph_dy(z.z).values
    gradh2 = ih11 * zx**2 + 2.0 * ih12 * zx * zy + ih22 * zy**2
    det = H11.values * H22.values - H12.values**2
    return Field(z.z.grid, det - K.values * h.det() * (1.0 - gradh2))


# ---------------------------------------------------------------------------
# frozen-coefficient Picard driver
# ---------------------------------------------------------------------------

def _gate_condition7prime(K: Field, V, eps: float) -> None:
    if V is None:
        g = K.grid
        V = (Field.zeros(g), Field.constant(g, 1.0))
    margin = condition7prime_margin(K, V, eps).values
    inner = np.abs(K.grid.x) <= 0.75
    mn = float(margin[inner, :].min())
    if mn < 0.0:
        raise CurvatureGateError(
            f"directional curvature condition fails on the inner region "
            f"(min margin {mn:.3e})"
        )


def _normal_form_coefficients(
    grid: GridSpec,
    P: np.ndarray,
    Q: np.ndarray,
    eps: float,
    psi: Field | None,
    alpha: float,
) -> CoefficientSet:
    """Cast the frozen linearization into the cylinder normal form.

    The operator keeps only the x-averaged inner profile of the
    second-order ratio P/Q; the x-dependent remainder, the mixed term
    and the gradient-factor terms all stay lagged on the right-hand side
    through the nonlinear residual.  With an x-independent profile the
    structural first-order form A = K_x + psi*K collapses to psi*K.
    """
    if Q.min() <= 0.0:
        raise DegenerateLinearizationError(
            "u_yy coefficient of the frozen linearization must stay positive"
        )
    ck = P / Q
    inner = np.abs(grid.x) <= 0.5
    profile = ck[inner, :].mean(axis=0)[None, :]
    Kt = Field(grid, np.broadcast_to(profile, grid.shape).copy() / eps)
    psi_vals = 0.0 if psi is None else psi.values
    At = Field(grid, psi_vals * Kt.values)
    return CoefficientSet(Kt, At, Field.zeros(grid), eps, alpha)


def _stencil_weights(offsets: np.ndarray, deriv: int) -> np.ndarray:
    """Weights reproducing the deriv-th derivative at 0 from nodes at offsets."""
    from math import factorial

    n = offsets.size
    V = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[deriv] = float(factorial(deriv))
    return np.linalg.solve(V, rhs)


class _SplitDerivatives:
    """Derivatives of z0 + d with the seam jump carried analytically.

    A graph on the cylinder chart is generally not periodic: crossing
    the seam x = +-1 its value and slope may jump.  Both jumps are
    measured per y-row by sextic extrapolation, subtracted through the
    fixed carrier j0(y)*x/2 + j1(y)*x^2/4 (unit value and slope jumps,
    smooth inside the chart), and the periodic remainder plus every
    Picard update is differentiated with periodic x-stencils.  This
    keeps one-sided stencils out of the iteration loop entirely, which
    would otherwise both seed a seam instability and bias the fixed
    point.
    """

    def __init__(self, z0: Field):
        g = z0.grid
        if g.nx < 14:
            raise ValueError(
                "the seam-jump carrier needs 7 clean columns per side; use nx >= 14"
            )
        self.grid = g
        self.base = z0.values.copy()
        hx = g.hx
        # sextic extrapolation of value and slope to the seam x = 1; a slope
        # jump misjudged by delta reappears as delta/h noise in the periodic
        # second difference, so the jump estimate must be high order
        npts = 7
        left = np.arange(-npts, 0) * hx
        w_val_l = _stencil_weights(left, 0)
        w_der_l = _stencil_weights(left, 1)
        right = np.arange(0, npts) * hx
        w_val_r = _stencil_weights(right, 0)
        w_der_r = _stencil_weights(right, 1)
        vl = self.base[-npts:, :]
        vr = self.base[:npts, :]
        j0 = w_val_l @ vl - w_val_r @ vr
        j1 = w_der_l @ vl - w_der_r @ vr
        x = g.x[:, None]
        cz = j0[None, :] * (x / 2.0) + j1[None, :] * (x**2 / 4.0)
        czx = np.broadcast_to(j0[None, :] / 2.0 + j1[None, :] * (x / 2.0), g.shape)
        self._carrier = {
            "zx": czx.copy(),
            "zy": graph_dy(Field(g, cz), 1).values,
            "zxx": np.broadcast_to(j1[None, :] / 2.0, g.shape).copy(),
            "zxy": graph_dy(Field(g, czx.copy()), 1).values,
            "zyy": graph_dy(Field(g, cz), 2).values,
        }
        self._periodic_base = self.base - cz

    def at(self, d_vals: np.ndarray) -> dict[str, np.ndarray]:
        g = self.grid
        p = Field(g, self._periodic_base + d_vals)
        px = differentiate(p, "x", 1)
        car = self._carrier
        return {
            "zx": car["zx"] + px.values,
            "zy": car["zy"] + graph_dy(p, 1).values,
            "zxx": car["zxx"] + differentiate(p, "x", 2).values,
            "zxy": car["zxy"] + graph_dy(px, 1).values,
            "zyy": car["zyy"] + graph_dy(p, 2).values,
        }


def _smooth_update(u: np.ndarray, fraction: float) -> np.ndarray:
    """Low-pass the x-spectrum of an update, keeping |k| <= fraction * nx.

    The determinant nonlinearity amplifies mode k noise by O(k^2), so
    unfiltered Picard updates self-excite at high frequency; this is the
    desk-scale stand-in for the smoothing operators of a Nash-Moser
    scheme.
    """
    nx = u.shape[0]
    kcut = max(2, int(fraction * nx))
    spec = np.fft.rfft(u, axis=0)
    spec[kcut + 1 :] = 0.0
    return np.fft.irfft(spec, n=nx, axis=0)


def _picard(
    z0: GraphSurface,
    residual_from_derivs,
    principal_from_derivs,
    psi: Field | None,
    params: NonlinearParams,
    extra_guard=None,
) -> IterationReport:
    grid = z0.z.grid
    rho = z0.domain_scale
    alpha = np.sqrt(rho) * params.alpha0
    chi = cutoff_profile(grid)[:, None]
    split = _SplitDerivatives(z0.z)

    d = np.zeros(grid.shape)
    history: list[float] = []
    for it in range(params.max_iter + 1):
        derivs = split.at(d)
        if extra_guard is not None:
            extra_guard(derivs)
        res = residual_from_derivs(derivs)
        res_norm = l2_norm(Field(grid, chi * res))
        history.append(res_norm)
        tol = params.tol * 10.0 if it == 0 else params.tol
        if res_norm <= tol:
            return IterationReport(
                it, history, True, GraphSurface(Field(grid, split.base + d), rho)
            )
        if it == params.max_iter:
            break
        if (
            len(history) > params.stagnation_window
            and history[-1] >= history[-params.stagnation_window]
        ):
            return IterationReport(
                it,
                history,
                False,
                GraphSurface(Field(grid, split.base + d), rho),
                {"reason": "residual stagnation"},
            )
        P, Q = principal_from_derivs(derivs)
        cs = _normal_form_coefficients(grid, P, Q, rho, psi, alpha)
        f = Field(grid, -res / Q)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = solve_linear(LinearProblem(cs, f), require_conditions=False)
        d = d + params.theta * _smooth_update(rep.u.values, params.smoothing_fraction)
    return IterationReport(
        params.max_iter,
        history,
        False,
        GraphSurface(Field(grid, split.base + d), rho),
        {"reason": "max_iter"},
    )


def solve_prescribed_curvature(
    K: Field,
    z0: GraphSurface,
    psi: Field | None = None,
    params: NonlinearParams | None = None,
    V: tuple[Field, Field] | None = None,
) -> IterationReport:
    """Local graph with prescribed Gaussian curvature K, seeded at z0.

    The directional admissibility condition for K (with vector field V,
    default vertical) is required on the inner region before any solve.
    """
    params = params or NonlinearParams()
    _gate_condition7prime(K, V, z0.domain_scale)

    def residual_from_derivs(dv):
        det = dv["zxx"] * dv["zyy"] - dv["zxy"] ** 2
        grad2 = dv["zx"] ** 2 + dv["zy"] ** 2
        return det - K.values * (1.0 + grad2) ** 2

    def principal_from_derivs(dv):
        return dv["zyy"], dv["zxx"]

    return _picard(z0, residual_from_derivs, principal_from_derivs, psi, params)


def solve_darboux(
    K: Field,
    h: MetricData,
    z0: GraphSurface,
    psi: Field | None = None,
    params: NonlinearParams | None = None,
    V: tuple[Field, Field] | None = None,
) -> IterationReport:
    """Local solution of the Darboux equation in the metric h.

    The right-hand side degenerates when |grad_h z|^2 reaches 1, so the
    iteration rejects any iterate that leaves that regime.
    """
    params = params or NonlinearParams()
    _gate_condition7prime(K, V, z0.domain_scale)
    ih11, ih12, ih22 = h.inverse()
    gammas = christoffel_symbols(h)
    deth = h.det()

    def cov_hessian(dv):
        g1_11, g2_11, g1_12, g2_12, g1_22, g2_22 = gammas
        H11 = dv["zxx"] - g1_11 * dv["zx"] - g2_11 * dv["zy"]
        H12 = dv["zxy"] - g1_12 * dv["zx"] - g2_12 * dv["zy"]
        H22 = dv["zyy"] - g1_22 * dv["zx"] - g2_22 * dv["zy"]
        return H11, H12, H22

    def guard(dv) -> None:
        zx, zy = dv["zx"], dv["zy"]
        gradh2 = ih11 * zx**2 + 2.0 * ih12 * zx * zy + ih22 * zy**2
        if gradh2.max() >= 1.0:
            raise DegenerateLinearizationError(
                f"|grad_h z|^2 reached {gradh2.max():.3f}; right-hand side degenerates"
            )

    def residual_from_derivs(dv):
        H11, H12, H22 = cov_hessian(dv)
        zx, zy = dv["zx"], dv["zy"]
        gradh2 = ih11 * zx**2 + 2.0 * ih12 * zx * zy + ih22 * zy**2
        return H11 * H22 - H12**2 - K.values * deth * (1.0 - gradh2)

    def principal_from_derivs(dv):
        H11, _, H22 = cov_hessian(dv)
        return H22, H11

    return _picard(
        z0, residual_from_derivs, principal_from_derivs, psi, params, extra_guard=guard
    )


def flat_metric(grid: GridSpec) -> MetricData:
    one = Field.constant(grid, 1.0)
    return MetricData(one, Field.zeros(grid), one)
