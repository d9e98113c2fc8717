"""Numerical laboratory for local versus nonlocal (fractional) dispersal in competing populations."""

from .mesh import Grid, NodeSet, ball_nodes, build_grid, integrate
from .operators import OperatorMatrix, assemble_classical, assemble_fractional, gagliardo_seminorm_sq, operator
from .spectral import (
    BranchingCurve,
    EigenReport,
    branching_threshold,
    excess,
    poincare_constant,
    principal_eigenpair,
    reverse_condition,
    scaled_poincare,
)
from .steady import SteadyState, energy, max_principle_check, minimize_energy, newton_refine
from .stability import MismatchCertificate, instability_certificate, linearization_at_pure_nonlocal, mismatch_scan, qform
from .dynamics import SystemState, Trajectory, comparison_check, invasion_experiment, simulate, step
from .scenarios import (
    ScenarioSpec,
    branching_sweep,
    bump_resource,
    rescaled_family,
    rescaled_instability_threshold,
    run_construction_a,
    run_construction_b,
)
from .sharmonic import SHarmonicFit, fit_s_harmonic, local_impossibility

__version__ = "0.1.0"
