"""Linearisation of the competition system at pure equilibria.

At ``(u_tilde, 0)`` the linearised operator is block upper-triangular, so its
spectrum is read off two diagonal blocks:

* u-block: ``Delta + sigma - 2 u_tilde`` (local diffusion),
* v-block: ``-(-Delta)^s + sigma - u_tilde`` (nonlocal diffusion).

A mismatch certificate exhibits a ball-supported ``v_star`` with ``Q(0, v_star) > 0``,
which forces the v-block principal eigenvalue to be positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .mesh import Grid, GridError, NodeSet, ball_nodes, candidate_balls, check_field
from .operators import operator
from .spectral import EigenReport, principal_eigenpair, scaled_poincare, smallest_eigenpair, unit_ball_poincare

REFERENCE_NODES = {1: 1024, 2: 64}


@lru_cache(maxsize=None)
def reference_poincare(s: float, dim: int = 1) -> float:
    """``C#(s, B_1)`` from one high-resolution solve, reused by every scan."""
    return unit_ball_poincare(s, dim, REFERENCE_NODES[dim])


@dataclass
class QFormValue:
    total: float
    grad_u: float
    frac_v: float
    resource_u: float
    cross: float
    resource_v: float


def qform(grid: Grid, s: float, sigma, u_tilde, u, v) -> QFormValue:
    """Quadratic form of the linearisation at ``(u_tilde, 0)``; energies from the operator forms."""
    sigma = check_field(grid, sigma, "sigma")
    ut = check_field(grid, u_tilde, "u_tilde")
    u = check_field(grid, u, "u")
    v = check_field(grid, v, "v")
    dv = grid.cell_volume
    parts = dict(
        grad_u=-operator(grid, 1.0).quadratic_form(u),
        frac_v=-operator(grid, s).quadratic_form(v),
        resource_u=dv * float(np.sum((sigma - 2 * ut) * u**2)),
        cross=-dv * float(np.sum(ut * u * v)),
        resource_v=dv * float(np.sum((sigma - ut) * v**2)),
    )
    return QFormValue(total=float(sum(parts.values())), **parts)


@dataclass
class MismatchCertificate:
    s: float
    x0: tuple[float, ...]
    r: float
    gap: float
    threshold: float
    direct_threshold: float
    witness: np.ndarray
    q_value: float
    lam: float
    u_block: float | None = None

    @property
    def satisfied(self) -> bool:
        """Mismatch inequality with the scaled unit-ball constant."""
        return bool(self.gap > self.threshold)

    @property
    def satisfied_direct(self) -> bool:
        """Same inequality with the eigenvalue of the discrete ball itself."""
        return bool(self.gap > self.direct_threshold)

    @property
    def certified(self) -> bool:
        return bool(self.satisfied and self.q_value > 0 and self.lam > 0)

    def as_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "r": self.r,
            "gap": self.gap,
            "threshold": self.threshold,
            "direct_threshold": self.direct_threshold,
            "satisfied": self.satisfied,
            "Q": self.q_value,
            "lambda": self.lam,
            "u_block": self.u_block,
            "s": self.s,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.as_dict(), indent=2) + "\n")
        return path


def v_block_eigenvalue(grid: Grid, s: float, sigma, u_tilde) -> EigenReport:
    """Principal eigenvalue of ``-(-Delta)^s + (sigma - u_tilde)``; the report is negated."""
    mat = operator(grid, s).matrix - np.diag(np.asarray(sigma) - np.asarray(u_tilde))
    rep = smallest_eigenpair(mat, grid.cell_volume)
    rep.eigenvalue = -rep.eigenvalue
    return rep


def u_block_eigenvalue(grid: Grid, sigma, u_tilde) -> EigenReport:
    """Principal eigenvalue of ``Delta + sigma - 2 u_tilde``."""
    mat = operator(grid, 1.0).matrix - np.diag(np.asarray(sigma) - 2 * np.asarray(u_tilde))
    rep = smallest_eigenpair(mat, grid.cell_volume)
    rep.eigenvalue = -rep.eigenvalue
    return rep


def instability_certificate(grid: Grid, s: float, sigma, u_tilde, ball: NodeSet,
                            c_ref: float | None = None) -> MismatchCertificate:
    """Certificate on one ball with ``v_star`` the ball's principal eigenfunction."""
    sigma = check_field(grid, sigma, "sigma")
    ut = check_field(grid, u_tilde, "u_tilde")
    if ball.radius is None:
        raise GridError("certificate needs a ball with a known radius")
    c_ref = reference_poincare(s, grid.dim) if c_ref is None else c_ref
    op = operator(grid, s)
    local = principal_eigenpair(op, ball)
    v_star = local.eigenfunction
    q = qform(grid, s, sigma, ut, np.zeros(grid.size), v_star)
    return MismatchCertificate(
        s=float(s),
        x0=ball.center,
        r=ball.radius,
        gap=float(np.min((sigma - ut)[ball.indices])),
        threshold=1.0 / scaled_poincare(c_ref, ball.radius, s),
        direct_threshold=local.eigenvalue,
        witness=v_star,
        q_value=q.total,
        lam=v_block_eigenvalue(grid, s, sigma, ut).eigenvalue,
        u_block=u_block_eigenvalue(grid, sigma, ut).eigenvalue,
    )


def _ball_gaps(grid, leftover, centres, r):
    gaps = np.empty(len(centres))
    for k, x0 in enumerate(centres):
        inside = np.linalg.norm(grid.nodes - x0, axis=1) < r
        gaps[k] = leftover[inside].min() if inside.any() else -np.inf
    return gaps


def mismatch_scan(grid: Grid, s: float, sigma, u_tilde, candidates=None,
                  c_ref: float | None = None) -> MismatchCertificate:
    """Best ball by ``gap - threshold``, then re-verified by a restricted eigensolve.

    ``candidates`` is a list of ``(x0, r)`` pairs; by default every node centre
    with a radius on the dyadic ladder that keeps the ball inside the box.
    """
    sigma = check_field(grid, sigma, "sigma")
    ut = check_field(grid, u_tilde, "u_tilde")
    candidates = candidate_balls(grid) if candidates is None else list(candidates)
    if not candidates:
        raise GridError("no candidate ball fits in the domain")
    c_ref = reference_poincare(s, grid.dim) if c_ref is None else c_ref
    leftover = sigma - ut
    by_radius: dict[float, list] = {}
    for x0, r in candidates:
        by_radius.setdefault(float(r), []).append(np.atleast_1d(np.asarray(x0, dtype=float)))
    best = None
    for r, centres in by_radius.items():
        margin = _ball_gaps(grid, leftover, centres, r) - 1.0 / scaled_poincare(c_ref, r, s)
        k = int(np.argmax(margin))
        if best is None or margin[k] > best[0]:
            best = (margin[k], centres[k], r)
    _, x0, r = best
    return instability_certificate(grid, s, sigma, ut, ball_nodes(grid, x0, r), c_ref)


def linearization_at_pure_nonlocal(grid: Grid, s: float, sigma, v_tilde) -> tuple[float, EigenReport]:
    """Principal eigenvalue of ``Delta + sigma - v_tilde`` (invasion by the local species)."""
    sigma = check_field(grid, sigma, "sigma")
    vt = check_field(grid, v_tilde, "v_tilde")
    mat = operator(grid, 1.0).matrix - np.diag(sigma - vt)
    rep = smallest_eigenpair(mat, grid.cell_volume)
    rep.eigenvalue = -rep.eigenvalue
    return rep.eigenvalue, rep
