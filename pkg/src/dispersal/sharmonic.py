"""Steering interior values of s-harmonic functions with far-away exterior data.

The box ``(-R, R)^n`` is split into the inner ball ``B_1`` and the collar
``B_R \\ B_1`` (everything else is zero). For collar data ``g`` the discrete
s-harmonic function in ``B_1`` solves ``A_in u + A_cross g = 0``, so the inner
trace is the linear image ``u = G g`` with ``G = -A_in^{-1} A_cross`` and the best
fit to a target is a (ridge) least-squares problem.

With ``s == 1`` the same split with a one-cell collar is the discrete
Dirichlet problem, which is how the local control experiment is built.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

from .mesh import Grid, build_grid
from .operators import operator

RIDGE = 1e-10
CORE_RADIUS = 1 / 16
RING_RADIUS = 1 / 10


@dataclass
class SHarmonicFit:
    s: float
    R: float
    grid: Grid
    inner: np.ndarray
    collar: np.ndarray
    target: np.ndarray
    g: np.ndarray
    u_in: np.ndarray
    rho: float

    @property
    def misfit(self) -> float:
        return float(np.max(np.abs(self.u_in - self.target))) if self.target.size else 0.0

    @property
    def sigma_eps(self) -> np.ndarray:
        """The fitted resource: the s-harmonic trace itself."""
        return self.u_in

    def full_field(self) -> np.ndarray:
        u = np.zeros(self.grid.size)
        u[self.inner] = self.u_in
        u[self.collar] = self.g
        return u

    def harmonicity_residual(self) -> float:
        """``|A_in u + A_cross g|_inf`` using the raw operator rows."""
        mat = operator(self.grid, self.s).matrix
        r = mat[np.ix_(self.inner, self.inner)] @ self.u_in + mat[np.ix_(self.inner, self.collar)] @ self.g
        return float(np.max(np.abs(r)))

    def summary(self) -> dict:
        return {"s": self.s, "R": self.R, "misfit": self.misfit, "rho": self.rho,
                "nodes": self.grid.n, "dim": self.grid.dim}

    def to_csv(self, path) -> Path:
        path = Path(path)
        u = self.full_field()
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y"][: self.grid.dim] + ["u"])
            for pt, val in zip(self.grid.nodes, u):
                writer.writerow([repr(float(c)) for c in pt] + [repr(float(val))])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2) + "\n")
        return path


def fit_grid(R: float, resolution: int, dim: int = 1) -> Grid:
    """Box ``(-R, R)^dim`` with spacing ``2 / resolution``, so grids for different R nest."""
    if not R > 1:
        raise ValueError(f"R must exceed 1, got {R}")
    half = int(round(R * resolution / 2))
    return build_grid(dim, (-half * 2 / resolution, half * 2 / resolution), 2 * half)


def _split(grid: Grid):
    dist = np.linalg.norm(grid.nodes, axis=1)
    inner = np.flatnonzero(dist < 1)
    collar = np.flatnonzero(dist >= 1)
    return inner, collar


def extension_matrix(grid: Grid, s: float):
    """``G = -A_in^{-1} A_cross`` restricted to collar nodes that couple to ``B_1``."""
    inner, collar = _split(grid)
    mat = operator(grid, s).matrix
    cross = mat[np.ix_(inner, collar)]
    active = np.any(cross != 0, axis=0)
    collar = collar[active]
    factor = cho_factor(mat[np.ix_(inner, inner)], lower=True)
    return inner, collar, -cho_solve(factor, cross[:, active])


def _target(grid, inner, sigma):
    if callable(sigma):
        cols = [grid.nodes[inner, k] for k in range(grid.dim)]
        return np.broadcast_to(np.asarray(sigma(*cols), dtype=float), (inner.size,)).copy()
    arr = np.asarray(sigma, dtype=float)
    if arr.shape != (inner.size,):
        raise ValueError(f"target has shape {arr.shape}, expected ({inner.size},)")
    return arr


def fit_s_harmonic(sigma, s: float, R: float, resolution: int = 512, dim: int = 1,
                   rho: float | None = None) -> SHarmonicFit:
    """Ridge least-squares fit of the inner trace to ``sigma`` over collar data.

    ``sigma`` is a callable of the coordinates or an array on the inner nodes.
    ``rho`` defaults to ``1e-10`` times the mean squared column norm of ``G``.
    """
    grid = fit_grid(R, resolution, dim)
    inner, collar, gmat = extension_matrix(grid, s)
    target = _target(grid, inner, sigma)
    u_svd, sv, vt = np.linalg.svd(gmat, full_matrices=False)
    if rho is None:
        rho = RIDGE * float(np.sum(sv**2)) / gmat.shape[1]
    keep = sv > 0 if rho > 0 else sv > sv[0] * np.finfo(float).eps * max(gmat.shape)
    coef = np.zeros_like(sv)
    coef[keep] = sv[keep] / (sv[keep] ** 2 + rho) * (u_svd.T @ target)[keep]
    g_active = vt.T @ coef
    all_inner, all_collar = _split(grid)
    g = np.zeros(all_collar.size)
    g[np.searchsorted(all_collar, collar)] = g_active
    return SHarmonicFit(float(s), float(R), grid, inner, all_collar, target, g, gmat @ g_active, float(rho))


def contrast_resource(M: float):
    """Smooth resource with ``sigma >= M`` on the core ball and ``sigma <= 1`` outside the ring."""
    def sigma(*coords):
        r = np.sqrt(sum(c**2 for c in coords))
        t = np.clip((r - CORE_RADIUS) / (RING_RADIUS - CORE_RADIUS), 0.0, 1.0)
        bump = 0.5 * (1 + np.cos(np.pi * t))
        return 1.0 + (M - 1.0) * bump
    return sigma


@dataclass
class ImpossibilityReport:
    M: float
    harmonic_misfit: float
    harnack_ratio: float
    harnack_bound: float
    fractional_misfit: float | None
    fractional_s: float | None

    def summary(self) -> dict:
        return dict(self.__dict__)


def best_sup_fit(gmat: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimise ``|G g - target|_inf`` by linear programming."""
    m, k = gmat.shape
    c = np.zeros(k + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    a_ub = np.vstack([np.hstack([gmat, -ones]), np.hstack([-gmat, -ones])])
    b_ub = np.concatenate([target, -target])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * (k + 1), method="highs")
    if not res.success:
        raise RuntimeError(f"linear program failed: {res.message}")
    return float(res.x[-1]), res.x[:-1]


def harnack_ratio(grid: Grid, inner: np.ndarray, gmat: np.ndarray) -> float:
    """Largest ``min_core u`` over discrete harmonic ``u`` with ``|u| <= 1`` outside the ring.

    Any fit with sup-misfit ``d`` to the contrast resource, rescaled by ``1 + d``,
    is admissible here, so ``d >= (M - q) / (1 + q)``.
    """
    dist = np.linalg.norm(grid.nodes[inner], axis=1)
    core = dist < CORE_RADIUS
    ring = dist > RING_RADIUS
    k = gmat.shape[1]
    c = np.zeros(k + 1)
    c[-1] = -1.0
    rows = [np.hstack([-gmat[core], np.ones((core.sum(), 1))])]
    rows.append(np.hstack([gmat[ring], np.zeros((ring.sum(), 1))]))
    rows.append(np.hstack([-gmat[ring], np.zeros((ring.sum(), 1))]))
    b = np.concatenate([np.zeros(core.sum()), np.ones(2 * ring.sum())])
    res = linprog(c, A_ub=np.vstack(rows), b_ub=b, bounds=[(None, None)] * (k + 1), method="highs")
    if not res.success:
        raise RuntimeError(f"linear program failed: {res.message}")
    return float(res.x[-1])


def local_impossibility(M: float, resolution: int = 512, dim: int = 1,
                        fractional_s: float | None = 0.5, fractional_R: float = 4.0) -> ImpossibilityReport:
    """Best harmonic sup-fit of the contrast resource, with the Harnack lower bound.

    Optionally fits the same resource with an s-harmonic function on ``B_R``
    for contrast.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    sigma = contrast_resource(M)
    grid = fit_grid(1 + 2.0 / resolution, resolution, dim)
    inner, _, gmat = extension_matrix(grid, 1.0)
    target = _target(grid, inner, sigma)
    misfit, _ = best_sup_fit(gmat, target)
    q = harnack_ratio(grid, inner, gmat)
    frac = None
    if fractional_s is not None:
        frac = fit_s_harmonic(sigma, fractional_s, fractional_R, resolution, dim).misfit
    return ImpossibilityReport(M, misfit, q, (M - q) / (1 + q), frac, fractional_s)
