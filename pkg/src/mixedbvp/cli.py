"""Configuration-driven command line front end.

Every certificate and solver is exposed as a subcommand writing CSV
artifacts plus a human-readable summary under the output directory,
together with a run.manifest recording inputs, seed and versions.
Exit codes: 0 all certificates pass, 1 a certificate failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .coeffs import check_alpha, check_condition7, preset_coefficients
from .grid import Field, make_grid, save_field
from .multiplier import build_abc, boundary_form_report, interior_form_report
from .nonlinear import (
    GraphSurface,
    NonlinearParams,
    flat_metric,
    solve_darboux,
    solve_prescribed_curvature,
)
from .operators import aux_equation_residual, aux_solve_report
from .solver import (
    LinearProblem,
    energy_certificate,
    mms_convergence,
    polynomial_sine_solution,
    random_smooth_samples,
    solve_linear,
)


class ConfigError(ValueError):
    pass


_RANGES = {
    "eps": (lambda v: 0.0 < v < 1.0, "eps must lie in (0, 1)"),
    "lam": (lambda v: v > 0.0, "lambda must be positive"),
    "m": (lambda v: 0 <= v <= 2, "m must be 0, 1 or 2"),
    "nx": (lambda v: v >= 4, "nx must be at least 4"),
    "ny": (lambda v: v >= 4, "ny must be at least 4"),
    "rho": (lambda v: 0.0 < v <= 1.0, "rho must lie in (0, 1]"),
    "theta": (lambda v: 0.0 < v <= 1.0, "theta must lie in (0, 1]"),
    "alpha0": (lambda v: v > 0.0, "alpha0 must be positive"),
    "samples": (lambda v: v >= 1, "samples must be at least 1"),
    "max_iter": (lambda v: v >= 1, "max_iter must be at least 1"),
    "tol": (lambda v: v > 0.0, "tol must be positive"),
}


@dataclass
class RunConfig:
    preset: str = "tricomi"
    eps: float = 1e-4
    alpha: float = 0.02
    lam: float = 10.0
    m: int = 1
    nx: int = 64
    ny: int = 64
    grids: str = "16,32,64"
    seed: int = 1234
    out: str = "out"
    samples: int = 20
    rho: float = 0.25
    alpha0: float = 1.2
    theta: float = 0.5
    psi: float = 0.0
    max_iter: int = 50
    tol: float = 1e-8
    rhs: str = "sine"

    def validate(self) -> None:
        for name, (ok, msg) in _RANGES.items():
            if not ok(getattr(self, name)):
                raise ConfigError(f"{name} = {getattr(self, name)}: {msg}")


_SECTION_KEYS = {
    "problem": ("preset", "eps", "alpha", "rhs"),
    "multiplier": ("lambda", "m"),
    "grid": ("nx", "ny", "grids"),
    "run": ("seed", "out", "samples"),
    "nonlinear": ("rho", "alpha0", "theta", "psi", "max_iter", "tol"),
}


def load_config(path) -> RunConfig:
    """Parse a key = value file with [section] headers into a RunConfig."""
    cfg = RunConfig()
    types = {f.name: type(getattr(cfg, f.name)) for f in dc_fields(cfg)}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in _SECTION_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = (tok.strip() for tok in line.partition("="))
            if section is None:
                raise ConfigError(f"{path}:{lineno}: key outside any [section]")
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(
                    f"{path}:{lineno}: unknown key {key!r} in section [{section}]"
                )
            attr = "lam" if key == "lambda" else key
            try:
                setattr(cfg, attr, types[attr](value))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _write_manifest(cfg: RunConfig, outdir: Path, command: str) -> None:
    import scipy

    lines = [f"command={command}", f"version={__version__}"]
    lines += [f"{f.name}={getattr(cfg, f.name)}" for f in dc_fields(cfg)]
    lines += [f"numpy={np.__version__}", f"scipy={scipy.__version__}"]
    (outdir / "run.manifest").write_text("\n".join(lines) + "\n")


def _coeffs(cfg: RunConfig, grid=None):
    grid = grid or make_grid(cfg.nx, cfg.ny)
    return preset_coefficients(cfg.preset, grid, cfg.eps, cfg.alpha)


def _parse_grids(spec: str):
    try:
        sizes = [int(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid list {spec!r}") from exc
    if not sizes:
        raise ConfigError("empty grid list")
    return [make_grid(n, n) for n in sizes]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_check(cfg: RunConfig, outdir: Path) -> int:
    cs = _coeffs(cfg)
    reports = [check_condition7(cs), check_alpha(cs)]
    text = "\n".join(str(r) for r in reports)
    (outdir / "conditions.txt").write_text(text + "\n")
    print(text)
    return 0 if all(r.passed for r in reports) else 1


def _cmd_multiplier(cfg: RunConfig, outdir: Path) -> int:
    cs = _coeffs(cfg)
    mt = build_abc(cs, cfg.lam, cfg.m, require_alpha=False)
    interior = interior_form_report(mt, cs)
    boundary = boundary_form_report(mt, cs)
    text = f"[interior]\n{interior}\n[boundary]\n{boundary}"
    (outdir / "forms.txt").write_text(text + "\n")
    combined = interior.to_csv() + "\n" + "\n".join(boundary.to_csv().splitlines()[1:])
    (outdir / "forms.csv").write_text(combined + "\n")
    print(text)
    return 0 if interior.all_passed and boundary.all_passed else 1


def _cmd_solve(cfg: RunConfig, outdir: Path) -> int:
    cs = _coeffs(cfg)
    if cfg.rhs == "sine":
        f = Field.from_function(cs.grid, lambda X, Y: np.sin(np.pi * X) * (1.0 + Y))
    elif cfg.rhs.startswith("csv:"):
        from .grid import load_field

        f = load_field(cfg.rhs[4:])
    else:
        raise ConfigError(f"unknown rhs {cfg.rhs!r} (use 'sine' or 'csv:<path>')")
    rep = solve_linear(LinearProblem(cs, f), require_conditions=False)
    save_field(rep.u, outdir / "solution.csv")
    text = (
        f"residual_norm={rep.residual_norm:.6e}\n"
        f"apriori_ratio={rep.apriori_ratio:.6e}\n"
        f"stats={rep.solver_stats}"
    )
    (outdir / "solve_report.txt").write_text(text + "\n")
    print(text)
    return 0


def _cmd_mms(cfg: RunConfig, outdir: Path) -> int:
    grids = _parse_grids(cfg.grids)
    table = mms_convergence(
        lambda g: preset_coefficients(cfg.preset, g, cfg.eps, cfg.alpha),
        polynomial_sine_solution(),
        grids,
    )
    (outdir / "convergence.csv").write_text(table.to_csv() + "\n")
    print(table.to_csv())
    orders = table.orders
    return 0 if orders and orders[-1] >= 1.5 else 1


def _cmd_energy(cfg: RunConfig, outdir: Path) -> int:
    if cfg.m > 1:
        raise ConfigError("energy certificate supports m = 0 or 1 (dual-norm order cap)")
    cs = _coeffs(cfg)
    mt = build_abc(cs, cfg.lam, cfg.m)
    vs = random_smooth_samples(cs.grid, cs.alpha, cfg.samples, cfg.seed, adjoint=True)
    report, samples = energy_certificate(cs, mt, vs)
    rows = ["sample,ratio,dual_constant,aux_iterations"]
    rows += [
        f"{i},{s.ratio:.8e},{s.dual_constant:.8e},{s.aux_iterations}"
        for i, s in enumerate(samples)
    ]
    (outdir / "energy_samples.csv").write_text("\n".join(rows) + "\n")
    (outdir / "energy.txt").write_text(report.to_text() + "\n")
    (outdir / "energy.csv").write_text(report.to_csv() + "\n")
    print(report.to_text())
    return 0 if report.all_passed else 1


def _cmd_aux(cfg: RunConfig, outdir: Path) -> int:
    cs = _coeffs(cfg)
    mt = build_abc(cs, cfg.lam, cfg.m, require_alpha=False)
    rng = np.random.default_rng(cfg.seed)
    coef = rng.standard_normal(3)
    v = Field.from_function(
        cs.grid,
        lambda X, Y: (1.0 - Y)
        * (coef[0] + coef[1] * np.sin(np.pi * X) + coef[2] * Y),
    )
    rows = ["lambda,iterations,contraction_ratio,equation_residual,converged"]
    worst = 0.0
    ok = True
    for lam in (cfg.lam / 10.0, cfg.lam, cfg.lam * 10.0):
        mt_l = build_abc(cs, lam, cfg.m, require_alpha=False)
        rep = aux_solve_report(v, mt_l)
        resid = aux_equation_residual(rep.u, v, mt_l)
        worst = max(worst, resid)
        ok = ok and rep.converged
        rows.append(
            f"{lam},{rep.iterations},{rep.contraction_ratio:.6e},{resid:.6e},{rep.converged}"
        )
    (outdir / "aux_sweep.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    return 0 if ok and worst <= 1e-6 else 1


def manufactured_curvature_pair(grid, rho: float):
    """Rescaled manufactured pair: z = x^2/2 + rho*y^3/6 with its literal curvature."""
    z = Field.from_function(grid, lambda X, Y: X**2 / 2.0 + rho * Y**3 / 6.0)
    K = Field.from_function(
        grid,
        lambda X, Y: rho * Y / (1.0 + X**2 + (rho * Y**2 / 2.0) ** 2) ** 2,
    )
    return z, K


def manufactured_darboux_pair(grid, rho: float, sigma: float = 0.5):
    """Shrunk graph keeping |grad z|^2 < 1/2, with its flat-metric Darboux source."""
    z = Field.from_function(
        grid, lambda X, Y: sigma * (X**2 / 2.0 + rho * Y**3 / 6.0)
    )
    def kfun(X, Y):
        grad2 = (sigma * X) ** 2 + (sigma * rho * Y**2 / 2.0) ** 2
        return sigma**2 * rho * Y / (1.0 - grad2)

    return z, Field.from_function(grid, kfun)


def _perturbation(grid, amplitude: float = 0.01):
    return Field.from_function(
        grid,
        lambda X, Y: amplitude * (1.0 - Y**2) * (1.0 + Y) ** 2 * np.sin(np.pi * X),
    )


def _write_iteration(outdir: Path, rep) -> None:
    rows = ["iteration,residual"]
    rows += [f"{i},{r:.8e}" for i, r in enumerate(rep.residual_history)]
    (outdir / "iteration.csv").write_text("\n".join(rows) + "\n")
    save_field(rep.final_z.z, outdir / "z_final.csv")


def _cmd_ma(cfg: RunConfig, outdir: Path) -> int:
    grid = make_grid(cfg.nx, cfg.ny)
    z_star, K = manufactured_curvature_pair(grid, cfg.rho)
    z0 = Field(grid, z_star.values + _perturbation(grid).values)
    params = NonlinearParams(
        alpha0=cfg.alpha0, theta=cfg.theta, tol=cfg.tol, max_iter=cfg.max_iter
    )
    psi = None if cfg.psi == 0.0 else Field.constant(grid, cfg.psi)
    rep = solve_prescribed_curvature(K, GraphSurface(z0, cfg.rho), psi, params)
    _write_iteration(outdir, rep)
    err = np.abs(rep.final_z.z.values - z_star.values).max()
    print(f"converged={rep.converged} iterations={rep.iterations} sup_error={err:.3e}")
    return 0 if rep.converged else 1


def _cmd_darboux(cfg: RunConfig, outdir: Path) -> int:
    grid = make_grid(cfg.nx, cfg.ny)
    z_star, K = manufactured_darboux_pair(grid, cfg.rho)
    z0 = Field(grid, z_star.values + _perturbation(grid).values)
    params = NonlinearParams(
        alpha0=cfg.alpha0, theta=cfg.theta, tol=cfg.tol, max_iter=cfg.max_iter
    )
    psi = None if cfg.psi == 0.0 else Field.constant(grid, cfg.psi)
    rep = solve_darboux(K, flat_metric(grid), GraphSurface(z0, cfg.rho), psi, params)
    _write_iteration(outdir, rep)
    err = np.abs(rep.final_z.z.values - z_star.values).max()
    print(f"converged={rep.converged} iterations={rep.iterations} sup_error={err:.3e}")
    return 0 if rep.converged else 1


_COMMANDS = {
    "check": _cmd_check,
    "multiplier": _cmd_multiplier,
    "solve": _cmd_solve,
    "mms": _cmd_mms,
    "energy": _cmd_energy,
    "aux": _cmd_aux,
    "ma": _cmd_ma,
    "darboux": _cmd_darboux,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedbvp",
        description="certificates and solvers for the mixed-type cylinder problem",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="key = value file with [section] headers")
    parser.add_argument("--preset")
    parser.add_argument("--eps", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--m", type=int)
    parser.add_argument("--nx", type=int)
    parser.add_argument("--ny", type=int)
    parser.add_argument("--grids")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--samples", type=int)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--alpha0", type=float)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--psi", type=float)
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--rhs")
    return parser


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        for f in dc_fields(cfg):
            override = getattr(args, f.name, None)
            if override is not None:
                setattr(cfg, f.name, override)
        cfg.validate()
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_manifest(cfg, outdir, args.command)
        return _COMMANDS[args.command](cfg, outdir)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
