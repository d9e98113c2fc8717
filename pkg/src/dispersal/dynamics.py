"""IMEX time stepping of the local/nonlocal competition system.

    u_t = -A_1 u + (sigma - u - v) u
    v_t = -A_s v + (sigma - u - v) v

Diffusion is implicit (one cached Cholesky factor per grid, order and step),
reaction explicit. The step is only accepted under the Lipschitz bound
``dt <= 1 / (2 (|sigma| + |u| + |v|) + 1)``, which keeps the explicit factor
``1 + dt (sigma - u - v)`` positive and therefore the scheme order preserving.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mesh import Grid, check_field, l2_norm
from .operators import operator
from .steady import energy

SAMPLE_STEPS = 10


class TimeStepError(ValueError):
    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class BlowUpError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class SystemState:
    grid: Grid
    s: float
    t: float
    u: np.ndarray
    v: np.ndarray


def admissible_dt(sigma, u, v) -> float:
    return 1.0 / (2 * (np.max(np.abs(sigma)) + np.max(np.abs(u)) + np.max(np.abs(v))) + 1)


@lru_cache(maxsize=32)
def _implicit_factor(grid: Grid, s: float, dt: float):
    return cho_factor(np.eye(grid.size) + dt * operator(grid, s).matrix, lower=True)


def implicit_solve(grid: Grid, s: float, dt: float, rhs) -> np.ndarray:
    """Solve ``(I + dt A_s) x = rhs`` with a cached factorisation."""
    return cho_solve(_implicit_factor(grid, float(s), float(dt)), rhs)


def step(state: SystemState, sigma, dt: float) -> SystemState:
    bound = admissible_dt(sigma, state.u, state.v)
    if not 0 < dt <= bound * (1 + 1e-12):
        raise TimeStepError(f"dt={dt:.6g} outside (0, {bound:.6g}]", bound)
    g = state.grid
    growth = sigma - state.u - state.v
    u = implicit_solve(g, 1.0, dt, state.u + dt * growth * state.u)
    v = implicit_solve(g, state.s, dt, state.v + dt * growth * state.v)
    return SystemState(g, state.s, state.t + dt, u, v)


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)

    def record(self, state: SystemState, sigma):
        g = state.grid
        self.times.append(state.t)
        self.u.append(state.u.copy())
        self.v.append(state.v.copy())
        self.diagnostics.append(diagnostics(state, sigma))

    @property
    def final(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u[-1], self.v[-1]

    def column(self, key: str) -> np.ndarray:
        return np.array([d[key] for d in self.diagnostics])

    def to_csv(self, path) -> Path:
        path = Path(path)
        keys = ["t", "L2_u", "L2_v", "max_u", "max_v", "energy_u"]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            for d in self.diagnostics:
                writer.writerow([repr(d[k]) for k in keys])
        return path


def diagnostics(state: SystemState, sigma) -> dict:
    g = state.grid
    return {
        "t": state.t,
        "L2_u": l2_norm(g, state.u),
        "L2_v": l2_norm(g, state.v),
        "min_u": float(state.u.min()),
        "max_u": float(state.u.max()),
        "min_v": float(state.v.min()),
        "max_v": float(state.v.max()),
        "energy_u": energy(g, 1.0, sigma, state.u).value,
    }


def simulate(grid: Grid, u0, v0, sigma, s: float, T: float, dt: float,
             sample_every: int = 1) -> Trajectory:
    """Integrate to time ``T`` with ``ceil(T/dt)`` equal steps of size at most ``dt``."""
    sigma = check_field(grid, sigma, "sigma")
    u0 = check_field(grid, u0, "u0")
    v0 = check_field(grid, v0, "v0")
    if not T > 0 or not dt > 0 or sample_every < 1:
        raise ValueError("T, dt and sample_every must be positive")
    nsteps = int(np.ceil(T / dt - 1e-9))
    h = T / nsteps
    guard = 10 * (float(np.max(np.abs(sigma))) + 1)
    state = SystemState(grid, float(s), 0.0, u0, v0)
    traj = Trajectory()
    traj.record(state, sigma)
    for k in range(1, nsteps + 1):
        state = step(state, sigma, h)
        if max(np.max(np.abs(state.u)), np.max(np.abs(state.v))) > guard:
            raise BlowUpError(f"sup norm exceeded {guard:g} at t={state.t:.6g}")
        if k % sample_every == 0 or k == nsteps:
            traj.record(state, sigma)
    return traj


@dataclass
class GrowthReport:
    eps: float
    dt: float
    rate: float
    lam: float | None

    @property
    def growing(self) -> bool:
        return bool(self.rate > 0)


def invasion_experiment(grid: Grid, u_tilde, v_star, eps: float, sigma, s: float,
                        T: float | None = None, lam: float | None = None,
                        steps: int = SAMPLE_STEPS) -> GrowthReport:
    """Mean growth rate of ``log |v|^2`` over the first ``steps`` steps from ``(u_tilde, eps v_star)``.

    ``T`` is the length of that window; by default the largest admissible one.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    sigma = check_field(grid, sigma, "sigma")
    v0 = eps * check_field(grid, v_star, "v_star")
    if T is None:
        T = steps * 0.9 * admissible_dt(sigma, u_tilde, v0)
    traj = simulate(grid, u_tilde, v0, sigma, s, T, T / steps)
    l2 = traj.column("L2_v")
    rate = float((2 * np.log(l2[-1]) - 2 * np.log(l2[0])) / T)
    return GrowthReport(eps, T / steps, rate, lam)


@dataclass(frozen=True)
class Reaction:
    """Scalar reaction ``f`` of ``w_t + (-Delta)^s w + f(w) = 0`` with Lipschitz bound."""

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    name: str = "f"


def logistic_reaction(sigma, bound: float) -> Reaction:
    """``f(w) = -(sigma - w) w``, Lipschitz on ``[0, bound]`` with ``|sigma| + 2 bound``."""
    sigma = np.asarray(sigma, dtype=float)
    return Reaction(lambda w: -(sigma - w) * w, float(np.max(np.abs(sigma)) + 2 * bound), "logistic")


def linear_reaction(a: float) -> Reaction:
    return Reaction(lambda w: a * w, abs(float(a)), "linear")


@dataclass
class ComparisonReport:
    holds: bool
    min_gap: float
    tol: float
    gaps: list[float]

    def __bool__(self) -> bool:
        return self.holds


def comparison_check(grid: Grid, v0, w0, reaction: Reaction, s: float, T: float,
                     dt: float) -> ComparisonReport:
    """Evolve two ordered data with the same scalar scheme and check ``v >= w - tol``."""
    v = check_field(grid, v0, "v0").copy()
    w = check_field(grid, w0, "w0").copy()
    if np.any(v < w):
        raise PreconditionError("initial data are not ordered (v0 >= w0 fails)")
    m = reaction.lipschitz
    if not 0 < dt <= 1 / (4 * (m + 1)):
        raise PreconditionError(f"dt={dt:.6g} exceeds 1/(4(M+1)) = {1 / (4 * (m + 1)):.6g}")
    tol = 10 * dt**2 * (1 + m) * T
    nsteps = int(np.ceil(T / dt - 1e-9))
    h = T / nsteps
    gaps = [float(np.min(v - w))]
    for _ in range(nsteps):
        v = implicit_solve(grid, s, h, v - h * reaction.func(v))
        w = implicit_solve(grid, s, h, w - h * reaction.func(w))
        gaps.append(float(np.min(v - w)))
    return ComparisonReport(bool(min(gaps) >= -tol), min(gaps), tol, gaps)
