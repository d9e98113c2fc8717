"""Nonnegative steady states of ``A u = (sigma - u) u`` with zero exterior data.

States are found by minimising the coercive energy

    E(u) = 1/2 <A u, u> - 1/2 int sigma u^2 + 1/3 int |u|^3

with a Sobolev-preconditioned descent (direction ``-(A + k I)^{-1} grad``),
replacing each iterate by its absolute value, and then polished by Newton on
the Euler-Lagrange equation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lu_factor, lu_solve

from .mesh import Grid, check_field
from .operators import operator
from .spectral import principal_eigenpair, reverse_condition

MAX_DESCENT = 5000
MAX_NEWTON = 50
COARSE_FACTOR = 1e-3
ARMIJO = 1e-4


class SteadyStateError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class EnergyReport:
    value: float
    diffusion: float
    resource: float
    cubic: float
    gradient_norm: float


@dataclass
class SteadyState:
    grid: Grid
    s: float
    u: np.ndarray
    residual: float
    energy: EnergyReport
    nontrivial: bool
    descent_steps: int = 0
    newton_steps: int = 0
    sigma_descriptor: object = None

    @property
    def sup(self) -> float:
        return float(self.u.max())

    def to_csv(self, path) -> Path:
        path = Path(path)
        meta = {
            "s": self.s,
            "sigma": self.sigma_descriptor,
            "residual": self.residual,
            "energy": self.energy.value,
        }
        cols = ["x", "y"][: self.grid.dim]
        with path.open("w", newline="") as fh:
            fh.write("# " + json.dumps(meta, default=str) + "\n")
            writer = csv.writer(fh)
            writer.writerow(cols + ["u"])
            for pt, val in zip(self.grid.nodes, self.u):
                writer.writerow([repr(float(c)) for c in pt] + [repr(float(val))])
        return path


def residual_field(grid: Grid, s: float, sigma, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return operator(grid, s).apply(u) - (sigma - u) * u


def pde_residual(grid: Grid, s: float, sigma, u) -> float:
    return float(np.max(np.abs(residual_field(grid, s, sigma, u))))


def residual_tolerance(sigma) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(sigma))))


def energy(grid: Grid, s: float, sigma, u) -> EnergyReport:
    """Discrete energy split into its diffusion, resource and cubic parts."""
    sigma = check_field(grid, sigma, "sigma")
    u = check_field(grid, u, "u")
    op = operator(grid, s)
    au = op.apply(u)
    dv = grid.cell_volume
    diffusion = 0.5 * dv * float(u @ au)
    resource = -0.5 * dv * float(np.sum(sigma * u**2))
    cubic = dv * float(np.sum(np.abs(u) ** 3)) / 3.0
    grad = au - sigma * u + np.abs(u) * u
    return EnergyReport(
        value=diffusion + resource + cubic,
        diffusion=diffusion,
        resource=resource,
        cubic=cubic,
        gradient_norm=float(np.sqrt(dv * grad @ grad)),
    )


def _value(grid, mat, sigma, u):
    dv = grid.cell_volume
    return dv * (0.5 * float(u @ (mat @ u)) - 0.5 * float(np.sum(sigma * u**2)) + float(np.sum(np.abs(u) ** 3)) / 3.0)


def default_seed(grid: Grid, s: float, sigma) -> np.ndarray:
    """Witness of the reverse condition scaled to minimise ``E`` along its ray.

    Along ``c w`` the energy is ``-c^2 m / 2 + c^3 int |w|^3 / 3`` with margin
    ``m``; the minimiser ``c = m / int |w|^3`` has strictly negative energy.
    Without the reverse condition the seed is a small multiple of ``phi_1``.
    """
    rc = reverse_condition(grid, s, sigma)
    if rc.holds and rc.margin > 0:
        w = np.abs(rc.witness)
        cube = grid.cell_volume * float(np.sum(w**3))
        return (rc.margin / cube) * w
    phi = principal_eigenpair(operator(grid, s)).eigenfunction
    return 1e-3 * np.abs(phi)


def _descent(grid, s, sigma, u, coarse_tol, max_iter):
    op = operator(grid, s)
    mat = op.matrix
    kappa = max(1.0, float(np.max(np.abs(sigma))))
    factor = cho_factor(mat + kappa * np.eye(grid.size), lower=True)
    value = _value(grid, mat, sigma, u)
    history = [value]
    for it in range(1, max_iter + 1):
        au = mat @ u
        res = au - (sigma - u) * u
        if np.max(np.abs(res)) <= coarse_tol:
            return u, it - 1, history
        grad = au - sigma * u + np.abs(u) * u
        direction = -cho_solve(factor, grad)
        slope = grid.cell_volume * float(grad @ direction)
        step = 1.0
        while True:
            trial = np.abs(u + step * direction)
            tv = _value(grid, mat, sigma, trial)
            if tv <= value + ARMIJO * step * slope:
                break
            step *= 0.5
            if step < 1e-12:
                return u, it, history
        u, value = trial, tv
        history.append(value)
    return u, max_iter, history


def newton_refine(grid: Grid, s: float, sigma, u, tol: float | None = None,
                  max_iter: int = MAX_NEWTON) -> SteadyState:
    """Damped Newton on ``F(u) = A u - (sigma - u) u``, clipped at zero afterwards."""
    sigma = check_field(grid, sigma, "sigma")
    u = check_field(grid, u, "u").copy()
    mat = operator(grid, s).matrix
    target = 1e-10 * max(1.0, float(np.max(np.abs(sigma)))) if tol is None else tol

    def resid(w):
        return mat @ w - (sigma - w) * w

    r = resid(u)
    rn = float(np.max(np.abs(r)))
    steps = 0
    while rn > target and steps < max_iter:
        jac = mat - np.diag(sigma - 2 * u)
        try:
            lu = lu_factor(jac, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise SteadyStateError(f"singular Jacobian: {exc}") from exc
        if np.any(np.abs(np.diag(lu[0])) == 0):
            raise SteadyStateError("singular Jacobian")
        delta = lu_solve(lu, -r)
        step = 1.0
        while step > 1e-6:
            trial = u + step * delta
            tr = resid(trial)
            tn = float(np.max(np.abs(tr)))
            if tn < (1 - 1e-4 * step) * rn:
                break
            step *= 0.5
        else:
            break
        u, r, rn = trial, tr, tn
        steps += 1
    u = np.maximum(u, 0.0)
    rn = pde_residual(grid, s, sigma, u)
    e = energy(grid, s, sigma, u)
    return SteadyState(grid, s, u, rn, e, bool(e.value < -1e-12 * grid.volume), newton_steps=steps)


def minimize_energy(grid: Grid, s: float, sigma, seed_field=None, *,
                    max_descent: int = MAX_DESCENT, descriptor=None) -> SteadyState:
    """Energy minimiser followed by Newton polishing.

    Raises ``SteadyStateError`` (carrying the last iterate) when the final
    residual exceeds ``1e-8 max(1, |sigma|_inf)``.
    """
    sigma = check_field(grid, sigma, "sigma")
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    u = default_seed(grid, s, sigma) if seed_field is None else np.abs(check_field(grid, seed_field, "seed"))
    tol = residual_tolerance(sigma)
    if not np.any(sigma > 0):
        # nothing to grow on: the minimiser is exactly zero
        state = newton_refine(grid, s, sigma, np.zeros(grid.size))
        state.sigma_descriptor = descriptor
        return state
    coarse = COARSE_FACTOR * max(1.0, float(np.max(sigma)))
    u, steps, _ = _descent(grid, s, sigma, u, coarse, max_descent)
    try:
        state = newton_refine(grid, s, sigma, u)
    except SteadyStateError:
        state = None
    if state is None or state.residual > tol:
        # Newton left the basin; fall back to a longer descent to the fine tolerance
        u, more, _ = _descent(grid, s, sigma, u, tol, 20 * max_descent)
        steps += more
        state = newton_refine(grid, s, sigma, u)
    state.descent_steps = steps
    state.sigma_descriptor = descriptor
    if state.residual > tol:
        raise SteadyStateError(
            f"steady solve stalled at residual {state.residual:.3e} > {tol:.3e}", state
        )
    return state


def max_principle_check(state: SteadyState, sigma, tol: float | None = None) -> bool:
    """``max u <= |sigma|_inf + tol``."""
    bound = float(np.max(np.abs(sigma)))
    tol = residual_tolerance(sigma) if tol is None else tol
    return bool(np.max(state.u) <= bound + tol)


def second_variation(grid: Grid, s: float, sigma, u_tilde, direction) -> float:
    """``int (A w) w - sigma w^2 + 2 u w^2``: Hessian of the energy at ``u_tilde``."""
    w = np.asarray(direction, dtype=float)
    op = operator(grid, s)
    return op.quadratic_form(w) + grid.cell_volume * float(np.sum((2 * u_tilde - sigma) * w**2))
