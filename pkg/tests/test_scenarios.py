import numpy as np
import pytest

from dispersal.mesh import GridError, build_grid, integrate
from dispersal.operators import operator
from dispersal.scenarios import (
    ScenarioError,
    ScenarioSpec,
    branching_sweep,
    bump_resource,
    default_base_sigma,
    dyadic_radii,
    rescale_state,
    rescaled_family,
    rescaled_instability_threshold,
    tau_ladder,
)
from dispersal.steady import minimize_energy, pde_residual, residual_tolerance


@pytest.fixture(scope="module")
def base():
    g = build_grid(1, (-1, 1), 128)
    sigma = default_base_sigma(g)
    return g, sigma, minimize_energy(g, 1.0, sigma)


def test_rescale_identity(base):
    g, sigma, _ = base
    g1, s1 = rescaled_family(sigma, g, 1.0)
    assert g1 == g and np.array_equal(s1, sigma)


@pytest.mark.parametrize("lam", [2.0, 17.5, 400.0])
def test_rescale_sup_norm(base, lam):
    g, sigma, _ = base
    g1, s1 = rescaled_family(sigma, g, lam)
    assert np.isclose(s1.max(), lam * sigma.max(), rtol=1e-14)
    assert np.isclose(g1.width, g.width / np.sqrt(lam), rtol=1e-14) and g1.n == g.n


@pytest.mark.parametrize("lam", [2.0, 17.5, 400.0])
def test_rescale_is_exact(base, lam):
    g, sigma, st_ = base
    g1, s1 = rescaled_family(sigma, g, lam)
    u1 = rescale_state(st_.u, lam)
    res = pde_residual(g1, 1.0, s1, u1)
    # every term picks up lam^2 on the matched grid, up to rounding in A u
    a_inf = np.abs(operator(g, 1.0).matrix).sum(axis=1).max()
    floor = 16 * np.finfo(float).eps * lam**2 * (a_inf + sigma.max()) * st_.u.max()
    assert abs(res - lam**2 * st_.residual) <= floor
    assert res <= lam * residual_tolerance(s1)


def test_rescale_rejects_small_lambda(base):
    g, sigma, _ = base
    with pytest.raises(ScenarioError):
        rescaled_family(sigma, g, 0.5)


def test_threshold_shape():
    assert rescaled_instability_threshold(2.0, 0.5, 0.5, 1.0) < rescaled_instability_threshold(1.0, 0.5, 0.5, 1.0)
    # with c0 r^{2s} C < 1 the exponent 1/(1-s) amplifies the bound as s grows
    lo = rescaled_instability_threshold(0.5, 1.0, 0.5, 1.0)
    hi = rescaled_instability_threshold(0.5, 1.0, 0.9, 1.0)
    assert hi > lo and np.isclose(lo, 4.0) and np.isclose(hi, 2.0**10)
    with pytest.raises(ScenarioError):
        rescaled_instability_threshold(0.0, 0.5, 0.5, 1.0)


def test_construction_a_mismatched(construction_a):
    a = construction_a
    assert a.c0 > 0 and a.lam >= 1 and np.isclose(a.lam, max(1.0, 2 * a.threshold_lam))
    assert a.certificate.satisfied and a.certificate.certified
    assert a.scaled.residual <= residual_tolerance(a.scaled_sigma)
    mat = np.diag(a.scaled_sigma - a.scaled.u) - operator(a.scaled_grid, a.s).matrix
    assert np.linalg.eigvalsh(mat)[-1] > 0


def test_bump_resource(line256):
    tau, r = 7.0, 0.3
    sigma = bump_resource(line256, tau, [0.1], r)
    assert sigma.max() == tau and set(np.unique(sigma)) == {0.0, tau}
    assert abs(integrate(line256, sigma) - tau * 2 * r) <= tau * line256.cell_volume
    assert np.all(bump_resource(line256, 0.0, [0.1], r) == 0)
    with pytest.raises(GridError):
        bump_resource(line256, 1.0, [0.9], 0.3)


def test_tau_ladder():
    taus = tau_ladder(3.0, 6)
    assert len(taus) == 7 and taus[0] == 6.0 and np.all(np.diff(taus) < 0) and taus[-1] > 3.0


def test_sweep_sup_decreases(construction_b):
    sw = construction_b.sweep
    assert sw.sup_monotone()
    assert sw.rows[-1].sup_u < 0.1 * sw.rows[0].sup_u


def test_sweep_cube_bound_literal(construction_b):
    rows = construction_b.sweep.rows
    bad = [(row.tau, row.cube, row.excess) for row in rows if row.cube > row.excess]
    assert not bad, f"L3 cube exceeds the excess at {bad}"


def test_sweep_cube_bound_with_mass(construction_b):
    for row in construction_b.sweep.rows:
        assert row.cube <= row.excess * row.l2_sq * (1 + 1e-6)


def test_sweep_certifies_above_threshold(construction_b):
    sw = construction_b.sweep
    tau = construction_b.certified_tau
    assert tau is not None and tau > sw.tau_lower
    cert = construction_b.certificate
    k = [row.tau for row in sw.rows].index(tau)
    g = construction_b.grid
    mat = np.diag(tau * (np.abs(g.x) < sw.r) - sw.states[k].u) - operator(g, sw.s).matrix
    assert np.linalg.eigvalsh(mat)[-1] > 0 and np.isclose(np.linalg.eigvalsh(mat)[-1], cert.lam, rtol=1e-8)
    assert construction_b.sign_pair


def test_every_certified_row_has_positive_lambda(construction_b):
    for row in construction_b.sweep.rows:
        if row.certified:
            assert row.lam > 0 and row.q_value > 0


def test_tau_star_quantities_reported(construction_b):
    summary = construction_b.summary()
    for key in ("tau_star", "radius_bound", "eps_window", "tau_lower"):
        assert summary[key] is not None and summary[key] > 0


def test_sweep_csv(tmp_path, construction_b):
    lines = construction_b.sweep.to_csv(tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "tau,sup_u,L3_u,excess,gap,threshold,certified"
    assert len(lines) == 1 + len(construction_b.sweep.rows)


def test_sweep_below_threshold_errors():
    g = build_grid(1, (-1, 1), 128)
    with pytest.raises(ScenarioError):
        branching_sweep(g, 0.3, [0.0], 0.25, tau_list=[1.0, 2.0])


def test_sweep_rejects_bad_order():
    g = build_grid(1, (-1, 1), 64)
    with pytest.raises(ScenarioError):
        branching_sweep(g, 0.5, [0.0], 0.25, s_prime=0.4)


def test_dyadic_radii(line256):
    radii = dyadic_radii(line256, [0.0])
    assert radii[0] == 1.0 and all(np.isclose(a / b, 2) for a, b in zip(radii, radii[1:]))
    assert radii[-1] >= 2 * line256.h


def test_scenario_spec_roundtrip(tmp_path):
    spec = ScenarioSpec("bump", 0.3, tau=10.0, x0=(0.0,), r=0.125, s_prime=0.65)
    again = ScenarioSpec.from_json(spec.to_json(tmp_path / "spec.json"))
    assert again == spec


@pytest.mark.parametrize("kwargs", [
    dict(kind="wave", s=0.3),
    dict(kind="rescaled", s=0.3, lam=0.5),
    dict(kind="bump", s=0.3, tau=-1.0),
    dict(kind="bump", s=0.3, x0=(0.95,), r=0.2),
])
def test_scenario_spec_invalid(kwargs):
    with pytest.raises((ScenarioError, GridError)):
        ScenarioSpec(**kwargs)
