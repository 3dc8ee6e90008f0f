import numpy as np
import pytest

from mixedbvp.cli import (
    _perturbation,
    manufactured_curvature_pair,
    manufactured_darboux_pair,
)
from mixedbvp.grid import Field, make_grid
from mixedbvp.nonlinear import (
    CurvatureGateError,
    DegenerateLinearizationError,
    DegenerateMetricError,
    GraphSurface,
    MetricData,
    NonlinearParams,
    covariant_hessian,
    curvature_residual,
    cutoff_profile,
    darboux_residual,
    flat_metric,
    graph_dx,
    graph_dy,
    solve_darboux,
    solve_prescribed_curvature,
)

PI = np.pi
RHO = 0.25


def test_curvature_residual_manufactured_zero():
    g = make_grid(64, 64)
    z = Field.from_function(g, lambda X, Y: X**2 / 2 + Y**3 / 6)
    K = Field.from_function(g, lambda X, Y: Y / (1 + X**2 + Y**4 / 4) ** 2)
    res = curvature_residual(GraphSurface(z, RHO), K)
    assert np.abs(res.values).max() < 1e-10


def test_curvature_residual_elliptic_sanity():
    g = make_grid(48, 48)
    z = Field.from_function(g, lambda X, Y: (X**2 + Y**2) / 2)
    K = Field.from_function(g, lambda X, Y: 1.0 / (1 + X**2 + Y**2) ** 2)
    res = curvature_residual(GraphSurface(z, RHO), K)
    assert np.abs(res.values).max() < 1e-10


def test_curvature_residual_zero_surface():
    g = make_grid(16, 16)
    res = curvature_residual(GraphSurface(Field.zeros(g), RHO), Field.zeros(g))
    assert np.all(res.values == 0.0)


def test_hessian_term_affine_invariant():
    g = make_grid(32, 32)
    rng = np.random.default_rng(1)
    z = Field.from_function(g, lambda X, Y: X**2 / 3 + np.sin(PI * X) * Y**2 / 10)
    za = Field(g, z.values + 0.7 * g.meshes()[0] - 0.2 * g.meshes()[1] + 5.0)

    def det_part(f):
        zxx = graph_dx(f, 2).values
        zyy = graph_dy(f, 2).values
        zxy = graph_dy(graph_dx(f, 1), 1).values
        return zxx * zyy - zxy**2

    assert np.abs(det_part(z) - det_part(za)).max() < 1e-9


def test_graph_derivatives_quartic_exact():
    g = make_grid(32, 32)
    z = Field.from_function(g, lambda X, Y: Y**4 - X**4 + X**2 * Y)
    X, Y = g.meshes()
    assert np.abs(graph_dy(z, 1).values - (4 * Y**3 + X**2)).max() < 1e-9
    assert np.abs(graph_dy(z, 2).values - 12 * Y**2).max() < 1e-8
    assert np.abs(graph_dx(z, 1).values - (-4 * X**3 + 2 * X * Y)).max() < 1e-9
    assert np.abs(graph_dx(z, 2).values - (-12 * X**2 + 2 * Y)).max() < 1e-8


def test_covariant_hessian_flat_metric():
    g = make_grid(24, 24)
    z = Field.from_function(g, lambda X, Y: X**2 / 2 + Y**3 / 6)
    H11, H12, H22 = covariant_hessian(z, flat_metric(g))
    zxx = graph_dx(z, 2).values
    assert np.abs(H11.values - zxx).max() == 0.0
    assert np.abs(H12.values).max() < 1e-10


def test_covariant_hessian_constant_diagonal_metric():
    g = make_grid(24, 24)
    one = Field.constant(g, 1.0)
    h = MetricData(one, Field.zeros(g), Field.constant(g, 2.5))
    z = Field.from_function(g, lambda X, Y: X * Y)
    H11, H12, H22 = covariant_hessian(z, h)
    assert np.abs(H12.values - 1.0).max() < 1e-10  # Christoffels vanish


def test_covariant_hessian_exponential_metric_oracle():
    g = make_grid(64, 64)
    one = Field.constant(g, 1.0)
    h = MetricData(one, Field.zeros(g), Field.from_function(g, lambda X, Y: np.exp(2 * X)))
    z = Field.from_function(g, lambda X, Y: Y + 0.0 * X)
    H11, H12, H22 = covariant_hessian(z, h)
    assert np.abs(H12.values + 1.0).max() < 1e-4  # Gamma^y_xy = 1
    assert np.abs(H11.values).max() < 1e-10


def test_metric_validation():
    g = make_grid(16, 16)
    one = Field.constant(g, 1.0)
    with pytest.raises(DegenerateMetricError):
        MetricData(one, Field.constant(g, 2.0), one)  # det < 0


def test_darboux_flat_reduction_oracle():
    # flat metric reduces the residual to det D^2 z - K (1 - |grad z|^2)
    g = make_grid(48, 48)
    sigma = 0.5
    z = Field.from_function(g, lambda X, Y: sigma * (X**2 / 2 + Y**3 / 6))

    def kfun(X, Y):
        grad2 = (sigma * X) ** 2 + (sigma * Y**2 / 2) ** 2
        return sigma**2 * Y / (1.0 - grad2)

    K = Field.from_function(g, kfun)
    res = darboux_residual(GraphSurface(z, RHO), K, flat_metric(g))
    assert np.abs(res.values).max() < 1e-11


def test_darboux_zero_fixed_point():
    g = make_grid(16, 16)
    res = darboux_residual(GraphSurface(Field.zeros(g), RHO), Field.zeros(g), flat_metric(g))
    assert np.all(res.values == 0.0)


def test_cutoff_profile_shape():
    g = make_grid(64, 64)
    chi = cutoff_profile(g)
    x = g.x
    assert np.all(chi[np.abs(x) <= 0.5] == 1.0)
    assert np.all(chi[np.abs(x) >= 0.75] == 0.0)
    assert np.all((0.0 <= chi) & (chi <= 1.0))


def test_prescribed_curvature_gate_rejects():
    g = make_grid(32, 32)
    K = Field.from_function(g, lambda X, Y: -Y)
    z0 = GraphSurface(Field.zeros(g), RHO)
    with pytest.raises(CurvatureGateError):
        solve_prescribed_curvature(K, z0)


def test_prescribed_curvature_fixed_point_start():
    g = make_grid(32, 32)
    z_star, K = manufactured_curvature_pair(g, RHO)
    rep = solve_prescribed_curvature(K, GraphSurface(z_star, RHO))
    assert rep.converged and rep.iterations == 0


def test_prescribed_curvature_recovery_small_grid():
    # the discrete fixed point sits O(h^3) from the continuum target, so
    # the coarse grid needs a matching residual tolerance
    g = make_grid(32, 32)
    z_star, K = manufactured_curvature_pair(g, RHO)
    z0 = Field(g, z_star.values + _perturbation(g).values)
    params = NonlinearParams(tol=5e-7)
    rep = solve_prescribed_curvature(K, GraphSurface(z0, RHO), None, params)
    assert rep.converged
    assert np.abs(rep.final_z.z.values - z_star.values).max() < 5e-5
    # residual history settles into a decreasing trend
    h = rep.residual_history
    assert h[4] < h[2] < h[0]


def test_darboux_recovery_small_grid():
    g = make_grid(32, 32)
    z_star, K = manufactured_darboux_pair(g, RHO)
    z0 = Field(g, z_star.values + _perturbation(g).values)
    params = NonlinearParams(tol=5e-7)
    rep = solve_darboux(K, flat_metric(g), GraphSurface(z0, RHO), None, params)
    assert rep.converged
    assert np.abs(rep.final_z.z.values - z_star.values).max() < 5e-5


def test_darboux_rejects_gradient_degeneration():
    g = make_grid(32, 32)
    z_star, K = manufactured_darboux_pair(g, RHO)
    steep = Field(g, z_star.values + 2.0 * g.meshes()[0] ** 2)  # |grad| > 1
    with pytest.raises(DegenerateLinearizationError):
        solve_darboux(K, flat_metric(g), GraphSurface(steep, RHO))


def test_iteration_report_residual_history_positive():
    g = make_grid(32, 32)
    z_star, K = manufactured_curvature_pair(g, RHO)
    z0 = Field(g, z_star.values + _perturbation(g).values)
    rep = solve_prescribed_curvature(K, GraphSurface(z0, RHO))
    assert all(r > 0 for r in rep.residual_history[:-1])


def test_graph_surface_scale_validation():
    g = make_grid(16, 16)
    with pytest.raises(ValueError):
        GraphSurface(Field.zeros(g), 0.0)
