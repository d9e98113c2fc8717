"""The two instability constructions wired end to end.

Rescaled family: shrink the domain by ``sqrt(lam)`` and amplify the resource by
``lam``. Local diffusion and resource then scale alike (``lam``) while the
nonlocal operator only scales like ``lam^s``, so for large ``lam`` the leftover
resource beats the fractional Poincare threshold on a fixed relative ball.

Bump family: ``sigma = tau * chi_{B_r(x0)}`` with ``tau`` just above the
branching threshold, where the local population is uniformly small and
almost all of ``tau`` is left over.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Grid, build_grid, ball_nodes, candidate_balls, check_field
from .operators import operator
from .spectral import (BranchingCurve, TauStarEstimate, branching_threshold, estimate_tau_star, principal_eigenpair,
                       smallest_eigenpair)
from .stability import MismatchCertificate, instability_certificate, mismatch_scan, reference_poincare
from .steady import SteadyState, minimize_energy, newton_refine, residual_tolerance


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    kind: str
    s: float
    dim: int = 1
    bounds: tuple = (-1.0, 1.0)
    nodes: int = 256
    sigma: object = None
    lam: float | None = None
    tau: float | None = None
    x0: tuple | None = None
    r: float | None = None
    s_prime: float | None = None

    def __post_init__(self):
        if self.kind not in ("rescaled", "bump"):
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.lam is not None and self.lam < 1:
            raise ScenarioError("lam must be >= 1")
        if self.tau is not None and not self.tau > 0:
            raise ScenarioError("tau must be positive")
        if self.r is not None and not self.r > 0:
            raise ScenarioError("r must be positive")
        if self.kind == "bump" and self.x0 is not None and self.r is not None:
            ball_nodes(self.grid(), self.x0, self.r)

    def grid(self) -> Grid:
        return build_grid(self.dim, self.bounds, self.nodes)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, default=list)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> ScenarioSpec:
        data = json.loads(text)
        for key in ("bounds", "x0"):
            if data.get(key) is not None:
                data[key] = tuple(tuple(b) if isinstance(b, list) else b for b in data[key])
        return cls(**data)


# rescaled family


def rescaled_family(base_sigma, base_grid: Grid, lam: float) -> tuple[Grid, np.ndarray]:
    """Shrunk grid (same node count, bounds over ``sqrt(lam)``) and ``lam * sigma`` at mapped nodes."""
    if lam < 1:
        raise ScenarioError(f"lam must be >= 1, got {lam}")
    sigma = check_field(base_grid, base_sigma, "sigma")
    k = np.sqrt(lam)
    grid = Grid(
        base_grid.dim,
        tuple(lo / k for lo in base_grid.lower),
        tuple(hi / k for hi in base_grid.upper),
        base_grid.n,
    )
    return grid, lam * sigma


def rescale_state(u, lam: float) -> np.ndarray:
    """``u_lam(x) = lam * u(sqrt(lam) x)`` on the matched grid."""
    return lam * np.asarray(u, dtype=float)


def rescaled_instability_threshold(c0: float, r: float, s: float, c_ref: float) -> float:
    """``(c0 r^{2s} C#(s, B_1))^{-1/(1-s)}``: above it the shrunk pair is mismatched."""
    if not c0 > 0:
        raise ScenarioError(f"no resource gap (c0={c0}); rescan the centre")
    if not 0 < s < 1:
        raise ScenarioError("fractional order must lie in (0, 1)")
    return float((c0 * r ** (2 * s) * c_ref) ** (-1.0 / (1.0 - s)))


def default_base_sigma(grid: Grid) -> np.ndarray:
    """``2 lambda_1 (1 - x^2)`` on ``(-1, 1)``."""
    l1 = principal_eigenpair(operator(grid, 1.0)).eigenvalue
    return 2 * l1 * (1 - grid.x**2)


def best_gap_ball(grid: Grid, sigma, u_tilde, s: float, candidates=None):
    """Ball maximising ``c0 r^{2s}`` (so minimising the threshold) among those with ``c0 > 0``."""
    leftover = np.asarray(sigma) - np.asarray(u_tilde)
    best = None
    for x0, r in candidate_balls(grid) if candidates is None else candidates:
        inside = np.linalg.norm(grid.nodes - x0, axis=1) < r
        if not inside.any():
            continue
        c0 = float(leftover[inside].min())
        if c0 > 0 and (best is None or c0 * r ** (2 * s) > best[0]):
            best = (c0 * r ** (2 * s), tuple(float(c) for c in x0), float(r), c0)
    if best is None:
        raise ScenarioError("no ball with a positive resource gap")
    return best[1], best[2], best[3]


@dataclass
class ConstructionA:
    s: float
    x0: tuple
    r: float
    c0: float
    threshold_lam: float
    lam: float
    base: SteadyState
    scaled: SteadyState
    scaled_grid: Grid
    scaled_sigma: np.ndarray
    certificate: MismatchCertificate

    @property
    def sign_pair(self) -> bool:
        return bool(self.certificate.u_block < 0 < self.certificate.lam)

    def summary(self) -> dict:
        return {
            "s": self.s,
            "x0": list(self.x0),
            "r": self.r,
            "c0": self.c0,
            "Lambda": self.threshold_lam,
            "lambda": self.lam,
            "base_residual": self.base.residual,
            "scaled_residual": self.scaled.residual,
            "certificate": self.certificate.as_dict(),
        }


def run_construction_a(s: float = 0.5, nodes: int = 256, base_sigma=None, factor: float = 2.0) -> ConstructionA:
    """Base state on ``(-1, 1)``, gap ball, threshold ``Lambda``, certificate at ``max(1, factor Lambda)``."""
    grid = build_grid(1, (-1.0, 1.0), nodes)
    sigma = default_base_sigma(grid) if base_sigma is None else check_field(grid, base_sigma, "sigma")
    base = minimize_energy(grid, 1.0, sigma)
    x0, r, c0 = best_gap_ball(grid, sigma, base.u, s)
    c_ref = reference_poincare(s, 1)
    big_lam = rescaled_instability_threshold(c0, r, s, c_ref)
    lam = max(1.0, factor * big_lam)
    sgrid, ssigma = rescaled_family(sigma, grid, lam)
    scaled = newton_refine(sgrid, 1.0, ssigma, rescale_state(base.u, lam))
    if scaled.residual > residual_tolerance(ssigma):
        raise ScenarioError(f"rescaled state residual {scaled.residual:.3e} too large")
    cert = mismatch_scan(sgrid, s, ssigma, scaled.u, c_ref=c_ref)
    return ConstructionA(s, x0, r, c0, big_lam, lam, base, scaled, sgrid, ssigma, cert)


# bump family


def bump_resource(grid: Grid, tau: float, x0, r: float) -> np.ndarray:
    if tau < 0:
        raise ScenarioError("tau must be nonnegative")
    return tau * ball_nodes(grid, x0, r).chi


@dataclass
class SweepRow:
    tau: float
    sup_u: float
    l3_u: float
    l2_sq: float
    excess: float
    gap: float
    threshold: float
    q_value: float
    lam: float
    u_block: float
    satisfied: bool
    certified: bool

    @property
    def cube(self) -> float:
        return self.l3_u**3


@dataclass
class SweepReport:
    s: float
    s_prime: float
    x0: tuple
    r: float
    tau_lower: float
    curve: BranchingCurve
    rows: list[SweepRow]
    tau_star: TauStarEstimate | None = None
    states: list[SteadyState] = field(default_factory=list, repr=False)
    certificates: list[MismatchCertificate] = field(default_factory=list, repr=False)

    @property
    def certified_tau(self) -> float | None:
        hits = [row.tau for row in self.rows if row.certified]
        return min(hits) if hits else None

    @property
    def radius_bound(self) -> float | None:
        """Admissible radius ``(C#(s,B_1) tau_* / 2)^{1/(2(s'-s))}`` at the measured proxy."""
        if self.tau_star is None:
            return None
        c_ref = reference_poincare(self.s, 1)
        return float((c_ref * self.tau_star.tau_star / 2) ** (1 / (2 * (self.s_prime - self.s))))

    @property
    def eps_window(self) -> float | None:
        if self.tau_star is None:
            return None
        return float(self.tau_star.tau_star / (2 * self.r ** (2 * (self.s_prime - self.s))))

    def sup_monotone(self) -> bool:
        """Sup norms shrink as tau decreases toward the threshold."""
        sups = [row.sup_u for row in sorted(self.rows, key=lambda row: -row.tau)]
        return all(b < a for a, b in zip(sups, sups[1:]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = ["tau", "sup_u", "L3_u", "excess", "gap", "threshold", "certified"]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([repr(row.tau), repr(row.sup_u), repr(row.l3_u), repr(row.excess),
                                 repr(row.gap), repr(row.threshold), int(row.certified)])
        return path


def tau_ladder(tau_lower: float, levels: int = 6) -> list[float]:
    """``tau_lower (1 + 2^-k)``, k = 0..levels, descending toward the threshold."""
    return [tau_lower * (1 + 2.0**-k) for k in range(levels + 1)]


def branching_sweep(grid: Grid, s: float, x0, r: float, tau_list=None, s_prime: float | None = None,
                    levels: int = 6, tau_star_radii=None) -> SweepReport:
    """Solve the local bump steady states along ``tau_list`` and certify each against order ``s``.

    ``tau_list`` defaults to the geometric ladder above the measured threshold.
    """
    s_prime = (s + 1) / 2 if s_prime is None else s_prime
    if not s < s_prime < 1:
        raise ScenarioError("s' must lie in (s, 1)")
    ball = ball_nodes(grid, x0, r)
    curve = branching_threshold(grid, ball, s_prime=s_prime)
    taus = tau_ladder(curve.tau_lower, levels) if tau_list is None else sorted(tau_list, reverse=True)
    op1 = operator(grid, 1.0)
    c_ref = reference_poincare(s, grid.dim)
    rows, states, certs = [], [], []
    for tau in taus:
        sigma = tau * ball.chi
        state = minimize_energy(grid, 1.0, sigma, descriptor={"kind": "bump", "tau": tau, "x0": list(ball.center), "r": r})
        e = -principal_eigenpair_shift(op1, tau, ball)
        cert = instability_certificate(grid, s, sigma, state.u, ball, c_ref)
        dv = grid.cell_volume
        rows.append(SweepRow(
            tau=float(tau),
            sup_u=state.sup,
            l3_u=float((dv * np.sum(state.u**3)) ** (1 / 3)),
            l2_sq=float(dv * np.sum(state.u**2)),
            excess=e,
            gap=cert.gap,
            threshold=cert.threshold,
            q_value=cert.q_value,
            lam=cert.lam,
            u_block=cert.u_block,
            satisfied=cert.satisfied,
            certified=cert.certified,
        ))
        states.append(state)
        certs.append(cert)
    if not any(st.nontrivial for st in states):
        raise ScenarioError("no tau in the list yields a nontrivial steady state")
    tau_star = None
    if tau_star_radii is not None:
        tau_star = estimate_tau_star(grid, x0, tau_star_radii, s_prime)
    return SweepReport(float(s), float(s_prime), ball.center, float(r), curve.tau_lower, curve,
                       rows, tau_star, states, certs)


def principal_eigenpair_shift(op, tau: float, ball) -> float:
    """Lowest eigenvalue of ``A_1 - tau chi_B``."""
    return smallest_eigenpair(op.matrix - tau * np.diag(ball.chi), op.grid.cell_volume).eigenvalue


def dyadic_radii(grid: Grid, x0, min_cells: int = 4) -> list[float]:
    """Radii ``width / 2^k`` whose balls at ``x0`` fit and hold at least ``min_cells`` nodes."""
    radii = []
    r = grid.width / 2
    while r >= min_cells * grid.h / 2:
        if grid.contains_ball(x0, r):
            radii.append(r)
        r /= 2
    return radii


@dataclass
class ConstructionB:
    sweep: SweepReport
    grid: Grid

    @property
    def certified_tau(self):
        return self.sweep.certified_tau

    @property
    def certificate(self) -> MismatchCertificate | None:
        tau = self.certified_tau
        if tau is None:
            return None
        k = [row.tau for row in self.sweep.rows].index(tau)
        return self.sweep.certificates[k]

    @property
    def sign_pair(self) -> bool:
        c = self.certificate
        return bool(c is not None and c.u_block < 0 < c.lam)

    def summary(self) -> dict:
        sw = self.sweep
        return {
            "s": sw.s,
            "s_prime": sw.s_prime,
            "x0": list(sw.x0),
            "r": sw.r,
            "tau_lower": sw.tau_lower,
            "certified_tau": sw.certified_tau,
            "tau_star": None if sw.tau_star is None else sw.tau_star.tau_star,
            "radius_bound": sw.radius_bound,
            "eps_window": sw.eps_window,
            "certificate": None if self.certificate is None else self.certificate.as_dict(),
        }


def run_construction_b(s: float = 0.3, nodes: int = 512, x0=(0.0,), r: float = 0.125,
                       s_prime: float | None = None, levels: int = 6, with_tau_star: bool = True) -> ConstructionB:
    grid = build_grid(1, (-1.0, 1.0), nodes)
    radii = dyadic_radii(grid, x0) if with_tau_star else None
    sweep = branching_sweep(grid, s, x0, r, s_prime=s_prime, levels=levels, tau_star_radii=radii)
    return ConstructionB(sweep, grid)
