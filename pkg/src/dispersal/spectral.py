"""Principal eigenpairs, Poincare constants, reverse conditions and the excess function.

Every eigenproblem here is a symmetric matrix problem: the quadrature mass is
the uniform cell volume, so Rayleigh quotients of the discrete L2 and energy
forms reduce to ordinary matrix Rayleigh quotients.

The smallest eigenvalue is found by inverse iteration. The shift is always
kept strictly below the spectrum, which is certified by a successful Cholesky
factorisation of ``M - shift*I``; with that guarantee inverse iteration can only
converge to the lowest eigenpair, and moving the shift up to the current
Rayleigh quotient makes convergence fast.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .mesh import Grid, NodeSet, ball_nodes, check_field
from .operators import OperatorMatrix, operator

EIGEN_RTOL = 1e-10
MAX_ITER = 5000
MAX_SHIFT_UPDATES = 8
TAU_CAP = 1e8


class ConvergenceError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class EigenReport:
    """Lowest eigenpair of a symmetric matrix with an L2-normalised eigenvector."""

    eigenvalue: float
    eigenfunction: np.ndarray
    residual: float
    iterations: int
    residual_floor: float = 0.0

    @property
    def converged(self) -> bool:
        return self.residual <= max(EIGEN_RTOL, self.residual_floor)


def _residual(mat, v, lam):
    r = mat @ v - lam * v
    return float(np.linalg.norm(r) / (np.linalg.norm(v) * max(abs(lam), 1.0)))


def _try_factor(mat, shift):
    shifted = mat - shift * np.eye(mat.shape[0])
    try:
        return cho_factor(shifted, lower=True, check_finite=False)
    except LinAlgError:
        return None


def smallest_eigenpair(mat, cell_volume: float = 1.0, *, rtol: float = EIGEN_RTOL,
                       max_iter: int = MAX_ITER, seed: int = 0) -> EigenReport:
    """Lowest eigenpair of symmetric ``mat`` by certified-shift inverse iteration.

    Starts from the all-ones vector (one random restart if that stalls). The
    eigenvector is sign-normalised to a nonnegative sum and scaled so that
    ``cell_volume * sum(phi**2) == 1``. The residual is
    ``|M phi - lam phi| / (|phi| max(|lam|, 1))``; its attainable floor in
    double precision is about ``eps * |M|_inf / max(|lam|, 1)``, reported as
    ``residual_floor``.
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValueError("matrix must be square")
    norm_inf = float(np.abs(mat).sum(axis=1).max()) if n else 0.0
    if n == 1:
        lam = float(mat[0, 0])
        return EigenReport(lam, np.array([1.0 / np.sqrt(cell_volume)]), 0.0, 0)

    diag = np.diag(mat)
    radius = np.abs(mat).sum(axis=1) - np.abs(diag)
    lower = float(np.min(diag - radius))
    eps_shift = 1e-9 * max(norm_inf, 1.0)
    start_vectors = [np.ones(n), np.random.default_rng(seed).random(n) + 0.5]
    floor = 64 * np.finfo(float).eps * norm_inf

    last = None
    for v0 in start_vectors:
        shift = lower - eps_shift
        factor = _try_factor(mat, shift)
        while factor is None:
            shift -= 10 * eps_shift + abs(shift)
            factor = _try_factor(mat, shift)
        v = v0 / np.linalg.norm(v0)
        updates = 0
        best = np.inf
        stall = 0
        for it in range(1, max_iter + 1):
            w = cho_solve(factor, v, check_finite=False)
            v = w / np.linalg.norm(w)
            mv = mat @ v
            lam = float(v @ mv)
            res_abs = float(np.linalg.norm(mv - lam * v))
            res = res_abs / max(abs(lam), 1.0)
            if res <= rtol:
                break
            if res < best * 0.999:
                best, stall = res, 0
            else:
                stall += 1
                if stall >= 5 and res <= max(rtol, floor / max(abs(lam), 1.0)):
                    break
                if stall >= 50:
                    break
            if updates < MAX_SHIFT_UPDATES and res_abs < 0.1 * (lam - shift):
                candidate = lam - max(2 * res_abs, eps_shift)
                for _ in range(4):
                    if candidate <= shift:
                        break
                    new = _try_factor(mat, candidate)
                    if new is not None:
                        factor, shift = new, candidate
                        break
                    candidate = 0.5 * (candidate + shift)
                updates += 1
        if v.sum() < 0:
            v = -v
        phi = v / np.sqrt(cell_volume)
        report = EigenReport(lam, phi, _residual(mat, v, lam), it, floor / max(abs(lam), 1.0))
        if report.converged:
            return report
        last = report
    raise ConvergenceError(
        f"inverse iteration did not converge (residual {last.residual:.3e})", last
    )


def principal_eigenpair(op, region=None) -> EigenReport:
    """Smallest eigenpair of an operator matrix, optionally restricted to a node subset.

    Restricting rows and columns is exactly the zero extension outside the
    region. The returned eigenfunction lives on the full grid (zero outside).
    """
    if isinstance(op, OperatorMatrix):
        grid = op.grid
        if region is None:
            rep = smallest_eigenpair(op.matrix, grid.cell_volume)
            return rep
        idx = _region_indices(grid, region)
        rep = smallest_eigenpair(op.restrict(idx), grid.cell_volume)
        full = np.zeros(grid.size)
        full[idx] = rep.eigenfunction
        rep.eigenfunction = full
        return rep
    if region is not None:
        raise ValueError("region restriction needs an OperatorMatrix")
    return smallest_eigenpair(op)


def _region_indices(grid: Grid, region) -> np.ndarray:
    if isinstance(region, NodeSet):
        idx = region.indices
    else:
        arr = np.asarray(region)
        idx = np.flatnonzero(arr) if arr.dtype == bool else arr.astype(np.intp)
    if idx.size == 0:
        raise ValueError("empty region")
    return idx


def poincare_constant(grid: Grid, s: float, region=None) -> float:
    """Sharp constant ``C#(s, region) = 1 / lambda_1`` of the zero-extended operator."""
    return 1.0 / principal_eigenpair(operator(grid, s), region).eigenvalue


def unit_ball_poincare(s: float, dim: int = 1, n: int = 1024) -> float:
    """Reference ``C#(s, B_1)``; in 2D a disk of nodes inside the box (-1, 1)^2."""
    from .mesh import build_grid

    grid = build_grid(dim, (-1.0, 1.0), n)
    region = None if dim == 1 else ball_nodes(grid, np.zeros(dim), 1.0)
    return poincare_constant(grid, s, region)


def scaled_poincare(c_ref_unit_ball: float, r: float, s: float) -> float:
    """``C#(s, B_r) = r^{2s} C#(s, B_1)``."""
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    return float(r ** (2 * s) * c_ref_unit_ball)


@dataclass
class ReverseConditionReport:
    holds: bool
    witness: np.ndarray
    margin: float
    nu: float
    sufficient: bool
    sufficient_lhs: float
    sufficient_rhs: float


def reverse_condition(grid: Grid, s: float, sigma) -> ReverseConditionReport:
    """Decide whether ``sup_u int sigma u^2 - [u]^2 > 0``.

    ``nu`` is the lowest eigenvalue of ``A - diag(sigma)``; the condition holds
    iff ``nu < 0`` and the witness (its eigenfunction) attains margin ``-nu``.
    Also evaluates the sufficient test ``lambda_1 int phi_1^2 < int sigma phi_1^2``.
    """
    sigma = check_field(grid, sigma, "sigma")
    op = operator(grid, s)
    shifted = smallest_eigenpair(op.matrix - np.diag(sigma), grid.cell_volume)
    w = shifted.eigenfunction
    margin = float(grid.cell_volume * np.sum(sigma * w**2)) - op.quadratic_form(w)
    base = principal_eigenpair(op)
    phi = base.eigenfunction
    lhs = base.eigenvalue * float(grid.cell_volume * np.sum(phi**2))
    rhs = float(grid.cell_volume * np.sum(sigma * phi**2))
    return ReverseConditionReport(
        holds=bool(shifted.eigenvalue < 0),
        witness=w,
        margin=margin,
        nu=shifted.eigenvalue,
        sufficient=bool(lhs < rhs),
        sufficient_lhs=lhs,
        sufficient_rhs=rhs,
    )


def excess(grid: Grid, tau: float, nodeset: NodeSet, op: OperatorMatrix | None = None) -> float:
    """``e(tau) = sup_{|u|=1} tau int_B u^2 - int |grad u|^2`` on the classical operator."""
    op = operator(grid, 1.0) if op is None else op
    mat = op.matrix - tau * np.diag(nodeset.chi)
    return -smallest_eigenpair(mat, grid.cell_volume).eigenvalue


@dataclass
class BranchingCurve:
    center: tuple[float, ...] | None
    radius: float | None
    samples: list[tuple[float, float]]
    tau_lower: float
    bracket: tuple[float, float]
    tol: float
    continuity_ok: bool
    s_prime: float | None = None
    lower_bound_ratio: float | None = None

    @property
    def taus(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def excesses(self) -> np.ndarray:
        return np.array([e for _, e in self.samples])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            meta = {
                "x0": list(self.center) if self.center is not None else None,
                "r": self.radius,
                "s_prime": self.s_prime,
                "bracket": list(self.bracket),
                "tau_lower": self.tau_lower,
            }
            fh.write("# " + json.dumps(meta) + "\n")
            writer = csv.writer(fh)
            writer.writerow(["tau", "excess"])
            for tau, e in self.samples:
                writer.writerow([repr(tau), repr(e)])
        return path


def branching_threshold(grid: Grid, nodeset: NodeSet, tol: float | None = None,
                        s_prime: float | None = None) -> BranchingCurve:
    """Bisect ``e(tau) = 0`` for the branching threshold ``sup{tau : e(tau) <= 0}``.

    The returned ``tau_lower`` is the bracket midpoint, so
    ``e(tau_lower - tol) <= 0 <= e(tau_lower + tol)``.
    """
    op = operator(grid, 1.0)
    if tol is None:
        tol = 1e-6 * principal_eigenpair(op).eigenvalue
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    samples: dict[float, float] = {}

    def e(tau):
        if tau not in samples:
            samples[tau] = excess(grid, tau, nodeset, op)
        return samples[tau]

    lo = 0.0
    if e(lo) > 0:
        raise ValueError("excess positive at tau = 0")
    hi = 1.0
    while e(hi) <= 0:
        lo = hi
        hi *= 2
        if hi > TAU_CAP:
            raise ValueError(f"bracket expansion exceeded {TAU_CAP:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if e(mid) <= 0:
            lo = mid
        else:
            hi = mid
    tau_lower = 0.5 * (lo + hi)
    e_plus = e(tau_lower + tol)
    curve = BranchingCurve(
        center=nodeset.center,
        radius=nodeset.radius,
        samples=sorted(samples.items()),
        tau_lower=tau_lower,
        bracket=(lo, hi),
        tol=tol,
        continuity_ok=bool(e_plus <= 2 * tol),
        s_prime=s_prime,
    )
    if s_prime is not None and nodeset.radius is not None:
        curve.lower_bound_ratio = tau_lower * nodeset.radius ** (2 * s_prime)
    return curve


@dataclass
class TauStarEstimate:
    """Empirical ``inf_r tau_lower(x0, r) r^{2 s'}`` over a radius sweep."""

    s_prime: float
    radii: list[float]
    thresholds: list[float]
    ratios: list[float] = field(default_factory=list)

    @property
    def tau_star(self) -> float:
        return float(min(self.ratios))


def estimate_tau_star(grid: Grid, x0, radii, s_prime: float, tol: float | None = None) -> TauStarEstimate:
    thresholds, ratios = [], []
    for r in radii:
        ball = ball_nodes(grid, x0, r)
        curve = branching_threshold(grid, ball, tol, s_prime)
        thresholds.append(curve.tau_lower)
        ratios.append(curve.lower_bound_ratio)
    return TauStarEstimate(s_prime, list(radii), thresholds, ratios)
