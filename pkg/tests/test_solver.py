import numpy as np
import pytest

from mixedbvp.coeffs import CoefficientSet, preset_coefficients
from mixedbvp.grid import Field, differentiate, l2_norm, make_grid
from mixedbvp.multiplier import build_abc
from mixedbvp.norms import NormOrder, sobolev_norm
from mixedbvp.solver import (
    BoundaryCompatibilityError,
    FactorizedOperator,
    LinearProblem,
    ManufacturedSolution,
    PreconditionError,
    _enforce_boundary,
    energy_certificate,
    identity18_residual,
    mms_convergence,
    polynomial_sine_solution,
    random_smooth_samples,
    solve_linear,
    uniqueness_boundary_form,
)

PI = np.pi


def tricomi_factory(eps, alpha):
    return lambda g: preset_coefficients("tricomi", g, eps, alpha)


def test_zero_forcing_gives_zero_solution():
    g = make_grid(32, 32)
    cs = preset_coefficients("tricomi", g, 1e-4, 0.02)
    rep = solve_linear(LinearProblem(cs, Field.zeros(g)))
    assert l2_norm(rep.u) <= 1e-12


def test_precondition_gate_raises_and_overrides():
    g = make_grid(32, 32)
    cs = preset_coefficients("tricomi", g, 1e-2, 0.02)  # alpha gate fails
    f = Field.constant(g, 1.0)
    with pytest.raises(PreconditionError):
        solve_linear(LinearProblem(cs, f))
    with pytest.warns(UserWarning):
        rep = solve_linear(LinearProblem(cs, f), require_conditions=False)
    assert np.isfinite(rep.u.values).all()


def test_solver_residual_is_tiny():
    g = make_grid(48, 48)
    cs = preset_coefficients("tricomi", g, 1e-4, 0.02)
    f = Field.from_function(g, lambda X, Y: np.sin(PI * X) * (1 + Y))
    rep = solve_linear(LinearProblem(cs, f))
    assert rep.residual_norm <= 1e-10 * l2_norm(f)
    assert rep.apriori_ratio > 0


def test_mms_recovery_and_orders():
    table = mms_convergence(
        tricomi_factory(0.01, 0.02),
        polynomial_sine_solution(),
        [make_grid(n, n) for n in (16, 32, 64)],
    )
    orders = table.orders
    assert all(1.5 <= o <= 2.3 for o in orders)


def test_mms_zero_solution():
    zero = ManufacturedSolution(*(lambda x, y: np.zeros_like(x),) * 5)
    table = mms_convergence(
        tricomi_factory(0.01, 0.02), zero, [make_grid(16, 16), make_grid(32, 32)]
    )
    assert all(r.error_l2 == 0.0 for r in table.rows)


def test_mms_rejects_incompatible_solution():
    bad = ManufacturedSolution(
        u=lambda x, y: np.cos(PI * x) * (1.0 + y),
        ux=lambda x, y: -PI * np.sin(PI * x) * (1.0 + y),
        uy=lambda x, y: np.cos(PI * x) * np.ones_like(y),
        uxx=lambda x, y: -PI**2 * np.cos(PI * x) * (1.0 + y),
        uyy=lambda x, y: np.zeros_like(x),
    )
    with pytest.raises(BoundaryCompatibilityError):
        mms_convergence(tricomi_factory(0.01, 0.02), bad, [make_grid(16, 16)])


def test_manufactured_solution_boundary_identities():
    ms = polynomial_sine_solution()
    x = np.linspace(-1, 1, 101)
    assert np.abs(ms.u(x, np.ones_like(x))).max() < 1e-14
    for alpha in (0.0, 0.02, 1.3):
        bottom = alpha * ms.ux(x, -np.ones_like(x)) + ms.uy(x, -np.ones_like(x))
        assert np.abs(bottom).max() < 1e-14


def test_apriori_ratio_stable_under_refinement():
    rng = np.random.default_rng(42)
    coefs = [rng.standard_normal(6) for _ in range(5)]

    def smooth_f(g, C):
        X, Y = g.meshes()
        return Field(
            g,
            C[0]
            + C[1] * np.sin(PI * X)
            + C[2] * np.cos(PI * X) * Y
            + C[3] * Y**2
            + C[4] * np.sin(2 * PI * X) * Y
            + C[5] * np.cos(2 * PI * X),
        )

    ratios = []
    for n in (32, 64):
        g = make_grid(n, n)
        fac = FactorizedOperator(preset_coefficients("tricomi", g, 1e-4, 0.02))
        worst = 0.0
        for C in coefs:
            f = smooth_f(g, C)
            u = fac.solve(f)
            worst = max(worst, l2_norm(u) / sobolev_norm(f, NormOrder(1, 0)))
        ratios.append(worst)
    assert max(ratios) / min(ratios) < 2.0


def test_derivative_shift_consistency():
    # solving the x-differentiated problem matches the x-derivative of the
    # solution for x-independent coefficients
    g = make_grid(64, 64)
    cs = preset_coefficients("tricomi", g, 1e-4, 0.02)
    fac = FactorizedOperator(cs)
    ms = polynomial_sine_solution()
    f = ms.forcing(cs)
    u = fac.solve(f)
    fx = differentiate(f, "x", 1)
    w = fac.solve(fx)
    ux = differentiate(u, "x", 1)
    err = l2_norm(Field(g, w.values - ux.values)) / l2_norm(ux)
    assert err < 5e-3


def test_enforced_samples_satisfy_discrete_bcs():
    from mixedbvp.operators import BoundarySpec, boundary_residual

    g = make_grid(32, 32)
    for adjoint, kind in ((True, "adjoint_oblique"), (False, "oblique")):
        vs = random_smooth_samples(g, 0.02, 5, seed=3, adjoint=adjoint)
        for v in vs:
            top, bottom = boundary_residual(v, BoundarySpec(kind, 0.02))
            assert np.abs(top).max() == 0.0
            assert np.abs(bottom).max() < 1e-12


def test_energy_certificate_positive_on_tricomi():
    g = make_grid(48, 48)
    cs = preset_coefficients("tricomi", g, 1e-4, 0.02)
    for m in (0, 1):
        mt = build_abc(cs, 10.0, m)
        vs = random_smooth_samples(g, cs.alpha, 25, seed=1234)
        rep, samples = energy_certificate(cs, mt, vs)
        e = rep.entries["energy_ratio"]
        assert e.passed and e.min > 0
        assert all(np.isfinite(s.dual_constant) for s in samples)


def test_energy_certificate_skips_zero_samples():
    g = make_grid(32, 32)
    cs = preset_coefficients("tricomi", g, 1e-4, 0.02)
    mt = build_abc(cs, 10.0, 0)
    vs = [Field.zeros(g)] + random_smooth_samples(g, cs.alpha, 3, seed=1)
    _, samples = energy_certificate(cs, mt, vs)
    assert len(samples) == 3


def test_energy_certificate_flags_condition_violation():
    # sign-reversed Tricomi coefficient: top-concentrated oscillatory
    # samples drive the ratio negative
    g = make_grid(64, 64)
    z = Field.zeros(g)
    cs = CoefficientSet(Field.from_function(g, lambda X, Y: -Y), z, z, 1e-2, 0.02)
    mt = build_abc(cs, 10.0, 0, require_alpha=False)
    X, Y = g.meshes()
    probes = [
        _enforce_boundary(
            g, np.sin(PI * k * X) * (1.0 - Y) * np.exp(-10 * (Y - 0.7) ** 2), 0.02, -1.0
        )
        for k in (8, 12, 16)
    ]
    rep, _ = energy_certificate(cs, mt, probes)
    assert rep.entries["energy_ratio"].min < 0


def test_identity18_zero_field():
    g = make_grid(16, 16)
    cs = preset_coefficients("tricomi", g, 0.01, 0.02)
    mt = build_abc(cs, 10.0, 1, require_alpha=False)
    assert identity18_residual(cs, mt, Field.zeros(g)) == 0.0


def test_identity18_refinement():
    errs = []
    for n in (32, 64, 128):
        g = make_grid(n, n)
        cs = preset_coefficients("tricomi", g, 0.01, 0.02)
        mt = build_abc(cs, 10.0, 1, require_alpha=False)
        u = Field.from_function(
            g, lambda X, Y: np.sin(PI * X) * (1 + Y - Y**2 - Y**3)
        )
        errs.append(identity18_residual(cs, mt, u))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.0


def test_identity18_x_independent_reduction():
    errs = []
    for n in (32, 64):
        g = make_grid(n, n)
        cs = preset_coefficients("tricomi", g, 0.01, 0.02)
        mt = build_abc(cs, 10.0, 1, require_alpha=False)
        u = Field.from_function(g, lambda X, Y: (1 + Y - Y**2 - Y**3) * np.ones_like(X))
        errs.append(identity18_residual(cs, mt, u))
    assert np.log2(errs[0] / errs[1]) >= 1.5


def test_uniqueness_boundary_form_nonnegative():
    g = make_grid(48, 48)
    for preset in ("tricomi", "infinite_order", "wedge"):
        cs = preset_coefficients(preset, g, 1e-4, 0.02)
        mt = build_abc(cs, 10.0, 1)
        for u in random_smooth_samples(g, cs.alpha, 20, seed=8, adjoint=False):
            assert uniqueness_boundary_form(cs, mt, u) >= -1e-10


def test_estimate_chain_finite_and_stable_on_all_presets():
    # measured energy constants and a priori ratios stay finite and do not
    # drift under refinement for every condition-passing preset
    from mixedbvp.coeffs import PRESET_NAMES

    f_mode = polynomial_sine_solution()
    for preset in PRESET_NAMES:
        values = {}
        for n in (24, 48):
            g = make_grid(n, n)
            cs = preset_coefficients(preset, g, 1e-4, 0.02)
            mt = build_abc(cs, 10.0, 0)
            vs = random_smooth_samples(g, cs.alpha, 10, seed=5)
            rep, _ = energy_certificate(cs, mt, vs)
            assert rep.entries["energy_ratio"].min > 0, preset
            assert np.isfinite(rep.entries["dual_chain_Csq"].max), preset
            srep = solve_linear(LinearProblem(cs, f_mode.forcing(cs)))
            assert np.isfinite(srep.apriori_ratio) and srep.apriori_ratio > 0
            values[n] = (rep.entries["energy_ratio"].min, srep.apriori_ratio)
        for coarse, fine in zip(values[24], values[48]):
            assert 0.3 <= fine / coarse <= 3.0, preset
