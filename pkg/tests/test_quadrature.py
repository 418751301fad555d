import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbma.quadrature import (adaptive_simplex_integral, barycentric_inverse_integrals,
                             barycentric_inverse_second_moments, barycentric_power_integrals,
                             complete_homogeneous, inverse_power_integrals, power_integrals,
                             simplex_volumes)

TRI = np.array([[0.0, 0.0], [2.0, 0.3], [0.4, 1.5]])


def _affine(simplex, values):
    """Affine function on R^n with the given values at the simplex vertices."""
    A = np.column_stack([simplex, np.ones(len(simplex))])
    coef = np.linalg.solve(A, values)
    return lambda x: x @ coef[:-1] + coef[-1]


def _bary(simplex, i):
    e = np.zeros(len(simplex))
    e[i] = 1.0
    return _affine(simplex, e)


def test_complete_homogeneous_small_cases():
    x = np.array([[1.0, 2.0, 3.0]])
    assert complete_homogeneous(x, 0)[0] == 1.0
    assert complete_homogeneous(x, 1)[0] == 6.0
    # h_2 = sum_{i<=j} x_i x_j
    assert complete_homogeneous(x, 2)[0] == 1 + 4 + 9 + 2 + 3 + 6


def test_simplex_volumes():
    assert simplex_volumes(TRI[None])[0] == pytest.approx(0.5 * abs(2.0 * 1.5 - 0.3 * 0.4))
    assert simplex_volumes(np.zeros((0, 3, 2))).shape == (0,)


@pytest.mark.parametrize("p", [0, 1, 2, 4])
def test_power_integrals_vs_cubature(p):
    vals = np.array([0.3, 1.1, 0.7])
    f = _affine(TRI, vals)
    ref = adaptive_simplex_integral(lambda x: f(x) ** p, TRI)
    got = power_integrals(simplex_volumes(TRI[None]), vals[None], p)[0]
    assert got == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("extra", [0, 1, 2])
def test_inverse_power_integrals_vs_cubature(extra):
    vals = np.array([0.4, 1.3, 0.9])
    f = _affine(TRI, vals)
    ref = adaptive_simplex_integral(lambda x: f(x) ** -(3.0 + extra), TRI, rtol=1e-12)
    got = inverse_power_integrals(simplex_volumes(TRI[None]), vals[None], extra)[0]
    assert got == pytest.approx(ref, rel=1e-8)


def test_barycentric_integrals_vs_cubature():
    vals = np.array([0.5, 1.2, 0.8])
    vol = simplex_volumes(TRI[None])
    f = _affine(TRI, vals)
    b_pow = barycentric_power_integrals(vol, vals[None], 2)[0]
    b_inv = barycentric_inverse_integrals(vol, vals[None])[0]
    b_sec = barycentric_inverse_second_moments(vol, vals[None])[0]
    for i in range(3):
        ti = _bary(TRI, i)
        assert b_pow[i] == pytest.approx(adaptive_simplex_integral(lambda x: ti(x) * f(x) ** 2, TRI),
                                         rel=1e-10)
        assert b_inv[i] == pytest.approx(
            adaptive_simplex_integral(lambda x: ti(x) * f(x) ** -4.0, TRI, rtol=1e-12), rel=1e-8)
        for j in range(3):
            tj = _bary(TRI, j)
            ref = adaptive_simplex_integral(lambda x: ti(x) * tj(x) * f(x) ** -5.0, TRI, rtol=1e-12)
            assert b_sec[i, j] == pytest.approx(ref, rel=1e-8)


def test_one_dimensional_inverse_power():
    # int_a^b (l)^-2 with l linear from l0 to l1 equals (b - a) / (l0 l1)
    seg = np.array([[[0.0], [2.0]]])
    vals = np.array([[0.5, 2.0]])
    assert inverse_power_integrals(simplex_volumes(seg), vals)[0] == pytest.approx(2.0 / 1.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.2, 3.0), min_size=3, max_size=3), st.integers(0, 5))
def test_power_integral_homogeneity(vals, p):
    vals = np.array(vals)[None]
    vol = simplex_volumes(TRI[None])
    a = power_integrals(vol, 2.0 * vals, p)[0]
    b = power_integrals(vol, vals, p)[0]
    assert a == pytest.approx(2.0 ** p * b, rel=1e-12)
    # constant integrand
    c = power_integrals(vol, np.full((1, 3), vals[0, 0]), p)[0]
    assert c == pytest.approx(vol[0] * vals[0, 0] ** p, rel=1e-12)
