"""Discrete anisotropic Sobolev norms and their dual (negative) norms.

The positive norm of order (m, l) sums the squared quadrature norms of
all mixed derivatives d^s/dx^s d^t/dy^t with s <= m, t <= l.  The
negative norm of order (-m, -l) is the dual norm

    sup over u of |(u, v)| / ||u||_(m,l)

taken over the whole discrete grid space.  On that finite-dimensional
space the supremum has the closed form sqrt(x' M v) with G x = M v,
where M is the diagonal quadrature mass matrix and G the Gram matrix of
the discrete (m, l) inner product, so no optimization is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Field, GridSpec, derivative_st, inner_product

MAX_ORDER = 2


class NormOrderError(ValueError):
    pass


class GramSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class NormOrder:
    """Pair of derivative orders (m in x, l in y); signs must agree."""

    m: int
    l: int

    def __post_init__(self):
        if (self.m > 0 > self.l) or (self.l > 0 > self.m):
            raise NormOrderError(f"mixed-sign order ({self.m},{self.l}) rejected")
        if max(abs(self.m), abs(self.l)) > MAX_ORDER:
            raise NormOrderError(
                f"orders are capped at {MAX_ORDER} per direction, got ({self.m},{self.l})"
            )

    @property
    def is_negative(self) -> bool:
        return self.m < 0 or self.l < 0


# ---------------------------------------------------------------------------
# sparse operator construction (mirrors grid.differentiate exactly)
# ---------------------------------------------------------------------------

def _dx_matrix(nx: int, hx: float, order: int) -> sp.csr_matrix:
    # mirrors grid._dx1/_dx2 exactly, including the coarse-grid fallback
    idx = np.arange(nx)
    if order == 1:
        if nx < 5:
            offs = {1: -1.0, -1: 1.0}
            scale = 2.0 * hx
        else:
            offs = {2: 1.0, 1: -8.0, -1: 8.0, -2: -1.0}
            scale = 12.0 * hx
    else:
        if nx < 5:
            offs = {1: 1.0, 0: -2.0, -1: 1.0}
            scale = hx * hx
        else:
            offs = {2: -1.0, 1: 16.0, 0: -30.0, -1: 16.0, -2: -1.0}
            scale = 12.0 * hx * hx
    mat = sp.lil_matrix((nx, nx))
    for off, coef in offs.items():
        mat[idx, (idx - off) % nx] = coef / scale
    return mat.tocsr()


def _dy_matrix(nyp: int, hy: float, order: int) -> sp.csr_matrix:
    mat = sp.lil_matrix((nyp, nyp))
    if order == 1:
        for j in range(1, nyp - 1):
            mat[j, j - 1] = -0.5 / hy
            mat[j, j + 1] = 0.5 / hy
        mat[0, [0, 1, 2]] = np.array([-3.0, 4.0, -1.0]) / (2.0 * hy)
        mat[nyp - 1, [nyp - 1, nyp - 2, nyp - 3]] = np.array([3.0, -4.0, 1.0]) / (
            2.0 * hy
        )
    else:
        for j in range(1, nyp - 1):
            mat[j, [j - 1, j, j + 1]] = np.array([1.0, -2.0, 1.0]) / (hy * hy)
        mat[0, [0, 1, 2, 3]] = np.array([2.0, -5.0, 4.0, -1.0]) / (hy * hy)
        mat[nyp - 1, [nyp - 1, nyp - 2, nyp - 3, nyp - 4]] = np.array(
            [2.0, -5.0, 4.0, -1.0]
        ) / (hy * hy)
    return mat.tocsr()


_MATRIX_CACHE: dict = {}


def derivative_matrix(grid: GridSpec, s: int, t: int) -> sp.csr_matrix:
    """Matrix form of derivative_st acting on row-major flattened fields."""
    key = (grid.nx, grid.ny, s, t)
    if key not in _MATRIX_CACHE:
        nyp = grid.ny + 1
        dx = (
            sp.identity(grid.nx, format="csr")
            if s == 0
            else _dx_matrix(grid.nx, grid.hx, s)
        )
        dy = (
            sp.identity(nyp, format="csr")
            if t == 0
            else _dy_matrix(nyp, grid.hy, t)
        )
        _MATRIX_CACHE[key] = sp.kron(dx, dy, format="csr")
    return _MATRIX_CACHE[key]


def mass_matrix(grid: GridSpec) -> sp.dia_matrix:
    key = (grid.nx, grid.ny, "mass")
    if key not in _MATRIX_CACHE:
        w = grid.hx * np.tile(grid.y_weights(), grid.nx)
        _MATRIX_CACHE[key] = sp.diags(w)
    return _MATRIX_CACHE[key]


def gram_matrix(grid: GridSpec, m: int, l: int) -> sp.csr_matrix:
    """Gram matrix of the discrete H^(m,l) inner product, m, l >= 0."""
    key = (grid.nx, grid.ny, "gram", m, l)
    if key not in _MATRIX_CACHE:
        M = mass_matrix(grid)
        G = sp.csr_matrix((np.prod(grid.shape),) * 2)
        for s in range(m + 1):
            for t in range(l + 1):
                D = derivative_matrix(grid, s, t)
                G = G + D.T @ M @ D
        _MATRIX_CACHE[key] = G.tocsc()
    return _MATRIX_CACHE[key]


def _gram_factor(grid: GridSpec, m: int, l: int):
    """LU of the Jacobi-equilibrated Gram: returns (lu, scaling diagonal).

    Equilibration keeps the factorization's backward error well under the
    solve-residual budget even for the stiff second-order Gram matrices.
    """
    key = (grid.nx, grid.ny, "gramlu", m, l)
    if key not in _MATRIX_CACHE:
        G = gram_matrix(grid, m, l)
        d = 1.0 / np.sqrt(G.diagonal())
        D = sp.diags(d)
        _MATRIX_CACHE[key] = (spla.splu((D @ G @ D).tocsc()), d)
    return _MATRIX_CACHE[key]


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def sobolev_norm(u: Field, order: NormOrder) -> float:
    """Anisotropic norm ||u||_(m,l) for nonnegative orders."""
    if order.is_negative:
        raise NormOrderError("negative orders go through negative_norm")
    total = 0.0
    for s in range(order.m + 1):
        for t in range(order.l + 1):
            d = derivative_st(u, s, t)
            total += inner_product(d, d)
    return float(np.sqrt(max(total, 0.0)))


def isotropic_norm(u: Field, m: int) -> float:
    """Standard H^m norm: all mixed derivatives with s + t <= m (m <= 2)."""
    if m < 0 or m > MAX_ORDER:
        raise NormOrderError(f"isotropic order must be in 0..{MAX_ORDER}")
    total = 0.0
    for s in range(m + 1):
        for t in range(m + 1 - s):
            d = derivative_st(u, s, t)
            total += inner_product(d, d)
    return float(np.sqrt(max(total, 0.0)))


def negative_norm(v: Field, order: NormOrder) -> float:
    """Dual norm ||v||_(-m,-l), exact on the discrete space via a Gram solve."""
    if not order.is_negative and (order.m, order.l) != (0, 0):
        raise NormOrderError("positive orders go through sobolev_norm")
    m, l = abs(order.m), abs(order.l)
    grid = v.grid
    M = mass_matrix(grid)
    G = gram_matrix(grid, m, l)
    lu, d = _gram_factor(grid, m, l)
    mv = M @ v.values.ravel()
    x = d * lu.solve(d * mv)
    scale = np.linalg.norm(mv)
    for _ in range(2):  # iterative refinement toward the rounding floor
        res = G @ x - mv
        if scale == 0 or np.linalg.norm(res) <= 1e-11 * scale:
            break
        x = x - d * lu.solve(d * res)
    # normwise backward error; the raw residual bottoms out at the
    # rounding floor of evaluating G @ x for the stiff second-order Gram
    res = np.linalg.norm(G @ x - mv)
    floor = spla.norm(G, np.inf) * np.linalg.norm(x) + scale
    if scale > 0 and res > 1e-8 * floor:
        raise GramSolveError(
            f"Gram solve backward error {res / floor:.2e} above tolerance"
        )
    return float(np.sqrt(max(float(x @ mv), 0.0)))


def schwarz_gap(u: Field, v: Field, order: NormOrder) -> float:
    """||u||_(m,l) * ||v||_(-m,-l) - |(u, v)|; nonnegative up to roundoff."""
    if order.is_negative:
        raise NormOrderError("schwarz_gap expects the positive order")
    pos = sobolev_norm(u, order)
    neg = negative_norm(v, NormOrder(-order.m, -order.l))
    return pos * neg - abs(inner_product(u, v))
