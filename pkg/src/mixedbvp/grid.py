"""Discrete cylinder geometry, finite-difference calculus and quadrature.

The domain is the rectangle |x| < 1, |y| < 1 with the vertical sides
x = -1 and x = +1 identified, so every field is 2-periodic in x.  The
x direction carries nx nodes (no duplicated seam column); the y
direction carries ny cells, hence ny+1 nodes including both walls
y = -1 and y = +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on the periodic cylinder."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise GridError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 2.0 / self.nx

    @property
    def hy(self) -> float:
        return 2.0 / self.ny

    @property
    def x(self) -> np.ndarray:
        """x-nodes, -1 + i*hx for i = 0..nx-1 (seam not duplicated)."""
        return -1.0 + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        """y-nodes, -1 + j*hy for j = 0..ny (both walls included)."""
        return -1.0 + self.hy * np.arange(self.ny + 1)

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        """X, Y arrays of shape (nx, ny+1)."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny + 1)

    def y_weights(self) -> np.ndarray:
        """Trapezoid weights along y (length ny+1)."""
        w = np.full(self.ny + 1, self.hy)
        w[0] = w[-1] = 0.5 * self.hy
        return w


def make_grid(nx: int, ny: int) -> GridSpec:
    return GridSpec(int(nx), int(ny))


@dataclass
class Field:
    """Scalar function sampled at the grid nodes, shape (nx, ny+1).

    x-periodicity is implicit through cyclic indexing; there is no
    duplicated seam column.
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(
                f"field shape {vals.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite entries")
        self.values = vals

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "Field":
        X, Y = grid.meshes()
        return cls(grid, np.asarray(fn(X, Y), dtype=float) + np.zeros(grid.shape))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))


def _check_same_grid(*fields: Field) -> GridSpec:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridError("fields live on different grids")
    return g


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def _dx1(v: np.ndarray, hx: float) -> np.ndarray:
    # fourth-order centered, periodic; the wide stencil aliases itself on
    # fewer than 5 columns, so the minimal grid falls back to second order
    if v.shape[0] < 5:
        return (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2.0 * hx)
    return (
        np.roll(v, 2, axis=0)
        - 8.0 * np.roll(v, 1, axis=0)
        + 8.0 * np.roll(v, -1, axis=0)
        - np.roll(v, -2, axis=0)
    ) / (12.0 * hx)


def _dx2(v: np.ndarray, hx: float) -> np.ndarray:
    if v.shape[0] < 5:
        return (
            np.roll(v, -1, axis=0) - 2.0 * v + np.roll(v, 1, axis=0)
        ) / (hx * hx)
    return (
        -np.roll(v, 2, axis=0)
        + 16.0 * np.roll(v, 1, axis=0)
        - 30.0 * v
        + 16.0 * np.roll(v, -1, axis=0)
        - np.roll(v, -2, axis=0)
    ) / (12.0 * hx * hx)


def _dy1(v: np.ndarray, hy: float) -> np.ndarray:
    # centered in the interior, one-sided second order at the walls
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * hy)
    out[:, 0] = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * hy)
    out[:, -1] = (3.0 * v[:, -1] - 4.0 * v[:, -2] + v[:, -3]) / (2.0 * hy)
    return out


def _dy2(v: np.ndarray, hy: float) -> np.ndarray:
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / (hy * hy)
    out[:, 0] = (2.0 * v[:, 0] - 5.0 * v[:, 1] + 4.0 * v[:, 2] - v[:, 3]) / (hy * hy)
    out[:, -1] = (2.0 * v[:, -1] - 5.0 * v[:, -2] + 4.0 * v[:, -3] - v[:, -4]) / (
        hy * hy
    )
    return out


def differentiate(u: Field, axis: str, order: int) -> Field:
    """Finite-difference partial derivative.

    axis is "x" (periodic stencils) or "y" (centered inside, one-sided
    second order at y = +-1).  order is 1 or 2.
    """
    if axis == "x":
        op = _dx1 if order == 1 else _dx2 if order == 2 else None
        h = u.grid.hx
    elif axis == "y":
        op = _dy1 if order == 1 else _dy2 if order == 2 else None
        h = u.grid.hy
    else:
        raise GridError(f"axis must be 'x' or 'y', got {axis!r}")
    if op is None:
        raise GridError(f"order must be 1 or 2, got {order!r}")
    return Field(u.grid, op(u.values, h))


def derivative_st(u: Field, s: int, t: int) -> Field:
    """Mixed derivative d^s/dx^s d^t/dy^t for 0 <= s, t <= 2.

    Second derivatives use the direct second-order stencil, not a
    composition of first differences.
    """
    if not (0 <= s <= 2 and 0 <= t <= 2):
        raise GridError("derivative orders are limited to 0..2 per direction")
    out = u
    if s:
        out = differentiate(out, "x", s)
    if t:
        out = differentiate(out, "y", t)
    return out


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def inner_product(u: Field, v: Field) -> float:
    """L2(Omega) inner product: rectangle rule in x, trapezoid in y."""
    g = _check_same_grid(u, v)
    wy = g.y_weights()
    return float(g.hx * np.sum(u.values * v.values * wy[None, :]))


def l2_norm(u: Field) -> float:
    return float(np.sqrt(max(inner_product(u, u), 0.0)))


def strip_inner_product(u: Field, v: Field, y_min: float, y_max: float) -> float:
    """Quadrature of u*v restricted to the strip y_min <= y <= y_max.

    The strip edges must coincide with grid nodes (within roundoff);
    trapezoid weights are rebuilt for the sub-interval.
    """
    g = _check_same_grid(u, v)
    y = g.y
    j0 = int(np.argmin(np.abs(y - y_min)))
    j1 = int(np.argmin(np.abs(y - y_max)))
    if abs(y[j0] - y_min) > 1e-9 or abs(y[j1] - y_max) > 1e-9:
        raise GridError("strip edges must lie on grid nodes")
    wy = np.full(j1 - j0 + 1, g.hy)
    wy[0] = wy[-1] = 0.5 * g.hy
    block = u.values[:, j0 : j1 + 1] * v.values[:, j0 : j1 + 1]
    return float(g.hx * np.sum(block * wy[None, :]))


def boundary_integral(w: Field, side: str) -> float:
    """Periodic rectangle-rule integral of w over the row y = +1 or y = -1.

    The outward-normal sign convention (n2 = +1 on top, -1 on bottom) is
    the caller's business.
    """
    if side == "top":
        row = w.values[:, -1]
    elif side == "bottom":
        row = w.values[:, 0]
    else:
        raise GridError(f"side must be 'top' or 'bottom', got {side!r}")
    return float(w.grid.hx * np.sum(row))


# ---------------------------------------------------------------------------
# difference quotients
# ---------------------------------------------------------------------------

def diff_quotient(u: Field, q: float) -> Field:
    """Vertical difference quotient (u(x, y+q) - u(x, y)) / q.

    q must be a nonzero integer multiple of hy.  Rows whose shifted node
    y+q would leave the closed strip |y| <= 1 are set to zero; callers
    measuring norms should restrict to an interior strip (see
    strip_inner_product), where the quotient is exact.
    """
    g = u.grid
    k = q / g.hy
    kj = int(round(k))
    if kj == 0 or abs(k - kj) > 1e-9:
        raise GridError("q must be a nonzero integer multiple of hy")
    out = np.zeros(g.shape)
    if kj > 0:
        out[:, : -kj or None] = (u.values[:, kj:] - u.values[:, :-kj]) / q
    else:
        out[:, -kj:] = (u.values[:, : kj] - u.values[:, -kj:]) / q
    return Field(g, out)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_field(u: Field, path) -> None:
    """Write CSV: one row per fixed y, columns are the x-nodes."""
    g = u.grid
    with open(path, "w") as fh:
        fh.write(f"# nx={g.nx} ny={g.ny}\n")
        for j in range(g.ny + 1):
            fh.write(",".join(f"{v:.17g}" for v in u.values[:, j]))
            fh.write("\n")


def load_field(path) -> Field:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise GridError(f"{path}: missing '# nx=.. ny=..' header")
        try:
            parts = dict(tok.split("=") for tok in header[1:].split())
            nx, ny = int(parts["nx"]), int(parts["ny"])
        except (ValueError, KeyError) as exc:
            raise GridError(f"{path}: malformed header {header!r}") from exc
        rows = [
            [float(tok) for tok in line.split(",")]
            for line in fh
            if line.strip()
        ]
    vals = np.array(rows, dtype=float)
    if vals.shape != (ny + 1, nx):
        raise GridError(
            f"{path}: data shape {vals.shape} does not match header ({ny + 1}, {nx})"
        )
    return Field(make_grid(nx, ny), vals.T.copy())
