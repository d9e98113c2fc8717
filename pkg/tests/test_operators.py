import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.linalg import solve

from dispersal.acceptance import torsion_oracle, torsion_profile
from dispersal.mesh import build_grid
from dispersal.operators import (
    OperatorError,
    assemble_classical,
    assemble_fractional,
    fractional_constant,
    gagliardo_seminorm_sq,
    kernel_table_2d,
    load_triplets,
    operator,
    tail_2d,
)
from dispersal.spectral import principal_eigenpair

orders = st.sampled_from([0.1, 0.3, 0.5, 0.75, 0.95])


def test_classical_constant_rows():
    g = build_grid(1, (-1, 1), 32)
    au = assemble_classical(g).apply(np.full(g.size, 3.0))
    assert np.isclose(au[0], 2 * 3.0 / g.h**2) and np.isclose(au[-1], 2 * 3.0 / g.h**2)
    assert np.allclose(au[1:-1], 0.0, atol=1e-9)


def test_classical_first_eigenfunction():
    g = build_grid(1, (-1, 1), 512)
    u = np.sin(np.pi * (g.x + 1) / 2)
    au = assemble_classical(g).apply(u)
    assert np.max(np.abs(au - (np.pi / 2) ** 2 * u) / ((np.pi / 2) ** 2 * u)) < 1e-3


def test_classical_symmetric_2d():
    a = assemble_classical(build_grid(2, (0, 1), 8)).matrix
    assert np.max(np.abs(a - a.T)) == 0


def test_classical_2d_eigenvalue():
    g = build_grid(2, (0, 1), 32)
    lam = principal_eigenpair(operator(g, 1.0)).eigenvalue
    assert abs(lam / (2 * np.pi**2) - 1) < 1e-3


def test_constant_reference_values():
    # C(1, 1/2) = 1/pi and C(2, 1/2) = 1/(2 pi) for the Cauchy kernel
    assert np.isclose(fractional_constant(1, 0.5), 1 / np.pi)
    assert np.isclose(fractional_constant(2, 0.5), 1 / (2 * np.pi))
    assert fractional_constant(1, 0.3) > 0


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5])
def test_fractional_order_checked(s):
    with pytest.raises(OperatorError):
        assemble_fractional(build_grid(1, (-1, 1), 8), s)


def test_operator_rejects_bad_order():
    with pytest.raises(OperatorError):
        operator(build_grid(1, (-1, 1), 8), 1.5)


def test_fractional_zero_field():
    op = operator(build_grid(1, (-1, 1), 64), 0.5)
    assert np.all(op.apply(np.zeros(64)) == 0)


def test_torsion_profile_middle_half():
    g = build_grid(1, (-1, 1), 1024)
    au = operator(g, 0.5).apply(torsion_profile(g.x, 0.5))
    assert np.max(np.abs(au[np.abs(g.x) < 0.5] - 1)) < 0.05


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_torsion_oracle_is_one(s):
    # the quadrature of the definition reproduces the closed form
    for x in (-0.6, -0.2, 0.0, 0.3, 0.7):
        assert abs(torsion_oracle(x, s) - 1) < 1e-7


def test_row_sums_are_tails():
    g = build_grid(1, (-1, 1), 64)
    op = operator(g, 0.4)
    np.testing.assert_allclose(op.matrix.sum(axis=1), op.tail, rtol=1e-9)
    assert np.all(op.tail > 0)


def test_tail_1d_closed_form():
    g = build_grid(1, (0, 2), 16)
    op = operator(g, 0.5)
    x = g.x
    expect = fractional_constant(1, 0.5) * ((2 - x) ** -1 + x**-1)
    np.testing.assert_allclose(op.tail, expect)


# exterior tail of the unit square by adaptive quadrature of the ray-exit distance
TAIL_ORACLE = [
    (8, (0.5625, 0.5625), 0.5, 11.538012825384705),
    (8, (0.1875, 0.6875), 0.3, 18.431014738332664),
    (10, (0.05, 0.05), 0.8, 230.3921880420775),
]


@pytest.mark.parametrize("n,point,s,expected", TAIL_ORACLE)
def test_tail_2d_against_oracle(n, point, s, expected):
    g = build_grid(2, (0, 1), n)
    k = int(np.argmin(np.linalg.norm(g.nodes - np.array(point), axis=1)))
    assert np.allclose(g.nodes[k], point)
    assert abs(tail_2d(g, s)[k] / expected - 1) < 1e-8


@pytest.mark.parametrize("p,q", [(1, 0), (1, 1), (2, 1), (5, 3)])
def test_kernel_table_2d_against_dblquad(p, q):
    s, h = 0.5, 0.1
    exact, _ = integrate.dblquad(
        lambda y, x: (x * x + y * y) ** (-1 - s), (p - 0.5) * h, (p + 0.5) * h, (q - 0.5) * h, (q + 0.5) * h,
        epsabs=1e-12, epsrel=1e-10,
    )
    coarse = abs(kernel_table_2d(h, h, 8, s)[p, q] / exact - 1)
    fine = abs(kernel_table_2d(h, h, 8, s, near_subdivision=32)[p, q] / exact - 1)
    # default 4x4 midpoint rule is a few percent on the nearest cells
    assert coarse < 0.05
    if max(p, q) <= 2:
        assert fine < 0.2 * coarse + 1e-6


@given(orders, st.integers(8, 40), st.integers(1, 2))
def test_m_matrix_structure(s, n, dim):
    if dim == 2:
        n = min(n, 12)
    a = operator(build_grid(dim, (-1, 1), n), s).matrix
    off = a - np.diag(np.diag(a))
    assert np.all(off <= 0)
    assert np.all(np.diag(a) > 0)
    assert np.max(np.abs(a - a.T)) == 0
    assert np.all(np.diag(a) - np.abs(off).sum(axis=1) > 0)


@given(orders, st.integers(0, 2**31 - 1))
def test_discrete_maximum_principle(s, seed):
    g = build_grid(1, (-1, 1), 48)
    f = np.random.default_rng(seed).uniform(0, 1, g.size)
    u = solve(operator(g, s).matrix, f, assume_a="pos")
    assert np.all(u >= 0)


@given(orders, st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_seminorm_matches_quadratic_form(s, dim, seed):
    g = build_grid(dim, (-1, 1), 40 if dim == 1 else 10)
    u = np.random.default_rng(seed).standard_normal(g.size)
    c = fractional_constant(dim, s)
    semi = c / 2 * gagliardo_seminorm_sq(g, s, u)
    form = operator(g, s).quadratic_form(u)
    assert abs(semi - form) / semi < 1e-10


def test_seminorm_definite():
    g = build_grid(1, (-1, 1), 32)
    assert gagliardo_seminorm_sq(g, 0.5, np.zeros(32)) == 0
    e = np.zeros(32)
    e[5] = 1e-3
    assert gagliardo_seminorm_sq(g, 0.5, e) > 0


@pytest.mark.parametrize("s", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("r", [0.25, 2.0])
def test_scaling_of_smallest_eigenvalue(s, r):
    base = principal_eigenpair(operator(build_grid(1, (-1, 1), 256), s)).eigenvalue
    scaled = principal_eigenpair(operator(build_grid(1, (-r, r), 256), s)).eigenvalue
    assert abs(scaled / (r ** (-2 * s) * base) - 1) < 0.01


def test_half_laplacian_eigenvalue_on_interval():
    # principal eigenvalue of the Cauchy process on (-1, 1), known to ten digits
    lam = principal_eigenpair(operator(build_grid(1, (-1, 1), 1024), 0.5)).eigenvalue
    assert abs(lam / 1.1577738836977 - 1) < 1e-3


def test_triplet_round_trip(tmp_path):
    op = operator(build_grid(2, (0, 1), 8), 0.6)
    path = op.dump_triplets(tmp_path / "a.txt")
    np.testing.assert_array_equal(load_triplets(path, op.size), op.matrix)


def test_operator_cache_and_immutability():
    g = build_grid(1, (-1, 1), 16)
    assert operator(g, 0.5) is operator(build_grid(1, (-1, 1), 16), 0.5)
    with pytest.raises(ValueError):
        operator(g, 0.5).matrix[0, 0] = 0.0
