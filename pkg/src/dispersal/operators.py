"""Dense matrices for -Laplacian and the fractional Laplacian with zero exterior data.

The fractional operator uses a piecewise-constant representation of the field:
row ``i`` collocates at the cell centre ``x_i`` and every other cell ``j``
contributes the exact (1D) or quadrature (2D) kernel mass

    K_ij = int_{cell_j} |x_i - y|^{-(n+2s)} dy.

The exterior tail ``T_i = int_{R^n \\ Omega} |x_i - y|^{-(n+2s)} dy`` lands on the
diagonal, so a constant field only feels the tail. The self cell contributes
nothing (principal value of a constant).

Normalisation: ``C(n,s) = 4^s Gamma(n/2+s) / (pi^{n/2} |Gamma(-s)|)``, under which
(-Delta)^s -> -Delta as s -> 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import gamma

from .mesh import Grid, check_field

NEAR_SUBDIVISION = 4
NEAR_RANGE = 2
TAIL_GAUSS_NODES = 16


class OperatorError(ValueError):
    pass


def fractional_constant(n: int, s: float) -> float:
    """Normalisation ``C(n, s)`` of the integral fractional Laplacian."""
    if not 0 < s < 1:
        raise OperatorError(f"fractional order must lie in (0, 1), got {s}")
    return float(4**s * gamma(n / 2 + s) / (np.pi ** (n / 2) * abs(gamma(-s))))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Symmetric M-matrix realising -Delta (``s == 1``) or (-Delta)^s on a grid.

    ``matrix`` acts on nodal values; the L2 quadratic form is
    ``cell_volume * u @ matrix @ u``. ``tail`` holds the exterior-tail part of
    the diagonal (zero for the classical stencil, whose boundary coupling is the
    ghost-node term).
    """

    grid: Grid
    s: float
    constant: float
    matrix: np.ndarray
    tail: np.ndarray

    @property
    def is_classical(self) -> bool:
        return self.s == 1

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, u) -> np.ndarray:
        return self.matrix @ np.asarray(u, dtype=float)

    def quadratic_form(self, u) -> float:
        """``int u (-Delta)^s u``: the (normalised) Dirichlet or Gagliardo energy."""
        u = np.asarray(u, dtype=float)
        return float(self.grid.cell_volume * (u @ (self.matrix @ u)))

    def restrict(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.intp)
        return self.matrix[np.ix_(idx, idx)]

    def dump_triplets(self, path, threshold: float = 0.0) -> Path:
        """Write nonzero entries as ``row col value`` lines."""
        path = Path(path)
        rows, cols = np.nonzero(np.abs(self.matrix) > threshold)
        with path.open("w") as fh:
            fh.write(f"# s={self.s} dim={self.grid.dim} n={self.grid.n} size={self.size}\n")
            for i, j in zip(rows, cols):
                fh.write(f"{i} {j} {self.matrix[i, j]:.17e}\n")
        return path


def load_triplets(path, size: int | None = None) -> np.ndarray:
    data = np.loadtxt(path, comments="#", ndmin=2)
    rows = data[:, 0].astype(int)
    cols = data[:, 1].astype(int)
    n = size if size is not None else int(max(rows.max(), cols.max())) + 1
    out = np.zeros((n, n))
    out[rows, cols] = data[:, 2]
    return out


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def assemble_classical(grid: Grid) -> OperatorMatrix:
    """3-point (1D) or 5-point (2D) stencil, Dirichlet data imposed on the cell faces.

    The ghost value beyond a face is the reflection ``-u`` of the adjacent node,
    so boundary rows carry ``3/h^2`` on the diagonal. This puts the zero exactly
    on the box boundary (second-order accurate eigenvalues).
    """
    n = grid.n
    blocks = []
    for h in grid.spacing:
        t = np.zeros((n, n))
        np.fill_diagonal(t, 2.0 / h**2)
        t[0, 0] = t[-1, -1] = 3.0 / h**2
        i = np.arange(n - 1)
        t[i, i + 1] = t[i + 1, i] = -1.0 / h**2
        blocks.append(t)
    if grid.dim == 1:
        mat = blocks[0]
    else:
        eye = np.eye(n)
        mat = np.kron(blocks[0], eye) + np.kron(eye, blocks[1])
    return OperatorMatrix(grid, 1.0, 1.0, _freeze(mat), _freeze(np.zeros(grid.size)))


def _antiderivative_1d(t, s):
    # int_t^inf x^{-1-2s} dx
    return t ** (-2 * s) / (2 * s)


def kernel_table_1d(h: float, n: int, s: float) -> np.ndarray:
    """Exact ``int_{cell at offset k} |y|^{-1-2s} dy`` for k = 0..n-1 (k = 0 set to 0)."""
    k = np.arange(1, n, dtype=float)
    vals = _antiderivative_1d((k - 0.5) * h, s) - _antiderivative_1d((k + 0.5) * h, s)
    return np.concatenate([[0.0], vals])


def tail_1d(grid: Grid, s: float) -> np.ndarray:
    a, b = grid.lower[0], grid.upper[0]
    x = grid.x
    return ((b - x) ** (-2 * s) + (x - a) ** (-2 * s)) / (2 * s)


def kernel_table_2d(hx: float, hy: float, n: int, s: float, near_subdivision: int = NEAR_SUBDIVISION) -> np.ndarray:
    """Kernel mass of the cell at offset ``(p, q)`` (p, q >= 0) for a cell-centred 2D grid.

    One-point midpoint rule away from the singularity, a ``near_subdivision``-fold
    tensor midpoint rule for offsets within ``NEAR_RANGE`` cells.
    """
    p = np.arange(n, dtype=float)[:, None]
    q = np.arange(n, dtype=float)[None, :]
    with np.errstate(divide="ignore"):
        table = hx * hy * ((p * hx) ** 2 + (q * hy) ** 2) ** (-1 - s)
    m = near_subdivision
    frac = (np.arange(m) + 0.5) / m - 0.5
    for pi in range(min(NEAR_RANGE + 1, n)):
        for qi in range(min(NEAR_RANGE + 1, n)):
            if pi == 0 and qi == 0:
                continue
            xs = (pi + frac) * hx
            ys = (qi + frac) * hy
            r2 = xs[:, None] ** 2 + ys[None, :] ** 2
            table[pi, qi] = (hx / m) * (hy / m) * np.sum(r2 ** (-1 - s))
    table[0, 0] = 0.0
    return table


def tail_2d(grid: Grid, s: float, gauss_nodes: int = TAIL_GAUSS_NODES) -> np.ndarray:
    """Exterior tail of a box via polar coordinates.

    For each side at normal distance ``d`` the radial integral is exact, leaving
    ``d^{-2s} / (2s) * int cos(phi)^{2s} dphi`` over the angle the side subtends;
    the angular integral uses Gauss-Legendre.
    """
    gx, gw = np.polynomial.legendre.leggauss(gauss_nodes)
    pts = grid.nodes
    (x0, y0), (x1, y1) = grid.lower, grid.upper
    x, y = pts[:, 0], pts[:, 1]
    # (normal distance, tangential extent on either side) per side
    sides = [
        (x1 - x, y - y0, y1 - y),
        (x - x0, y1 - y, y - y0),
        (y1 - y, x1 - x, x - x0),
        (y - y0, x - x0, x1 - x),
    ]
    total = np.zeros(grid.size)
    for d, left, right in sides:
        a = -np.arctan(left / d)
        b = np.arctan(right / d)
        mid, half = (a + b) / 2, (b - a) / 2
        phi = mid[:, None] + half[:, None] * gx[None, :]
        integral = half * np.sum(gw[None, :] * np.cos(phi) ** (2 * s), axis=1)
        total += d ** (-2 * s) * integral
    return total / (2 * s)


def _offset_matrix(grid: Grid, table: np.ndarray) -> np.ndarray:
    if grid.dim == 1:
        return toeplitz(table)
    idx = grid.index
    di = np.abs(idx[:, None, 0] - idx[None, :, 0])
    dj = np.abs(idx[:, None, 1] - idx[None, :, 1])
    return table[di, dj]


def kernel_masses(grid: Grid, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise cell kernel masses ``K`` (zero diagonal) and exterior tails ``T``."""
    if not 0 < s < 1:
        raise OperatorError(f"fractional order must lie in (0, 1), got {s}")
    if grid.dim == 1:
        table = kernel_table_1d(grid.h, grid.n, s)
        tail = tail_1d(grid, s)
    else:
        hx, hy = grid.spacing
        table = kernel_table_2d(hx, hy, grid.n, s)
        tail = tail_2d(grid, s)
    return _offset_matrix(grid, table), tail


def assemble_fractional(grid: Grid, s: float) -> OperatorMatrix:
    """Integral fractional Laplacian of order ``s`` in (0, 1) with zero exterior data."""
    c = fractional_constant(grid.dim, s)
    kmat, tail = kernel_masses(grid, s)
    mat = -c * kmat
    diag = c * (kmat.sum(axis=1) + tail)
    mat[np.diag_indices_from(mat)] = diag
    # both triangles come from one symmetric table; enforce bitwise symmetry anyway
    mat = 0.5 * (mat + mat.T)
    return OperatorMatrix(grid, float(s), c, _freeze(mat), _freeze(c * tail))


@lru_cache(maxsize=16)
def operator(grid: Grid, s: float) -> OperatorMatrix:
    """Cached assembly: classical for ``s == 1``, fractional for ``s`` in (0, 1)."""
    if s == 1:
        return assemble_classical(grid)
    if not 0 < s < 1:
        raise OperatorError(f"order must lie in (0, 1], got {s}")
    return assemble_fractional(grid, s)


def gagliardo_seminorm_sq(grid: Grid, s: float, u) -> float:
    """Unnormalised ``[u]^2 = int int |u(x)-u(y)|^2 / |x-y|^{n+2s}`` over R^n x R^n.

    Evaluated by pairwise differences of the zero-extended piecewise-constant
    field; pairs with exactly one point outside the box are counted twice.
    """
    u = check_field(grid, u)
    kmat, tail = kernel_masses(grid, s)
    diff2 = (u[:, None] - u[None, :]) ** 2
    interior = np.sum(diff2 * kmat)
    exterior = 2.0 * np.sum(u**2 * tail)
    return float(grid.cell_volume * (interior + exterior))
