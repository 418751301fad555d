import numpy as np
import pytest
from scipy.integrate import quad

from fbma.convex import MaxAffineFunction
from fbma.functionals import (EnergyState, add_max_affine, barycenter_residual, eval_E, eval_I,
                              eval_J, first_variation_E, inequality_suite, mass_removal,
                              measure_pair, optimal_shift, project_to_Cn2, random_admissible)
from fbma.geometry import barycentered_simplex, volume


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_I_of_constant_on_interval(k):
    # v = c  =>  u = |x| - c on [-c, c]; compare with direct quadrature of (-u)^(k+1)
    c = 0.8
    v = MaxAffineFunction([[0.0]], [c], barycentered_simplex(1))
    ref = quad(lambda x: (c - abs(x)) ** (k + 1), -c, c, points=[0.0])[0] / (k + 1)
    assert eval_I(v, k) == pytest.approx(ref, rel=1e-12)
    assert ref == pytest.approx(2 * c ** (k + 2) / ((k + 1) * (k + 2)), rel=1e-12)


def test_I_of_constant_on_triangle():
    # (1/2) int_{cP°} (c - h_P)^2 = |P°| c^4 / 12, and |P°| = 3/2 for this triangle
    c = 1.3
    v = MaxAffineFunction(np.zeros((1, 2)), [c], barycentered_simplex(2))
    assert eval_I(v, 1) == pytest.approx(1.5 * c ** 4 / 12, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_J_of_constant(n):
    c = 0.9
    P = barycentered_simplex(n)
    v = MaxAffineFunction(np.zeros((1, n)), [c], P)
    assert eval_J(v) == pytest.approx(volume(P) * c ** -(n + 1) / (n + 1), rel=1e-12)
    with pytest.raises(ValueError):
        eval_J(v, n + 1)


def test_J_of_tent_against_quadrature():
    v = MaxAffineFunction([[-0.5], [0.25], [1.0]], [0.6, 0.7, 0.5], barycentered_simplex(1))
    ref = quad(lambda y: v(np.array([y])) ** -2.0, -1, 1, points=[-2 / 15, 4 / 15], limit=200)[0] / 2
    assert eval_J(v) == pytest.approx(ref, rel=1e-10)


def test_energy_record_and_validation():
    v = MaxAffineFunction([[0.0]], [1.0], barycentered_simplex(1))
    rec = eval_E(v, 1)
    assert rec.E_value == pytest.approx(-np.log(rec.I_value) + rec.J_value ** -0.5)
    with pytest.raises(ValueError):
        eval_I(v, -1)


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (2, 2)])
def test_gradient_matches_central_differences(n, k, rng):
    P = barycentered_simplex(n)
    for _ in range(4):
        v = random_admissible(P, rng, project=False)
        db = rng.normal(size=v.n_pieces)
        da = rng.normal(size=v.slopes.shape)
        st = EnergyState(v, k)
        for slopes in (None, da):
            g = st.dE(db, slopes)
            eps = 1e-6

            def E(t):
                a = v.slopes if slopes is None else v.slopes + t * slopes
                return eval_E(MaxAffineFunction(a, v.intercepts + t * db, P), k).E_value
            fd = (E(eps) - E(-eps)) / (2 * eps)
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-9)
        assert np.dot(st.grad_E(), db) == pytest.approx(st.dE(db), rel=1e-12, abs=1e-14)
        assert first_variation_E(v, db, k) == pytest.approx(st.dE(db), rel=1e-12, abs=1e-14)


def test_scale_derivative(rng):
    v = random_admissible(barycentered_simplex(2), rng, project=False)
    st = EnergyState(v, 1)
    eps = 1e-6
    fd = (eval_E(v.scaled(1 + eps), 1).E_value - eval_E(v.scaled(1 - eps), 1).E_value) / (2 * eps)
    assert st.dE_scale() == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("n", [1, 2])
def test_projection_centers_nu(n, rng):
    P = barycentered_simplex(n)
    v = random_admissible(P, rng, project=False)
    w = project_to_Cn2(v)
    assert barycenter_residual(w) <= 1e-8
    # x0 minimizes J(v - <x, .>): nearby shifts are no better
    x0 = optimal_shift(v)
    J0 = eval_J(v.shifted(x0))
    for d in np.eye(n):
        assert eval_J(v.shifted(x0 + 1e-4 * d)) >= J0 - 1e-14
    # the nu-barycenter from measure_pair agrees
    mp = measure_pair(w, 1)
    np.testing.assert_allclose(mp.nu_barycenter, 0.0, atol=1e-8)


@pytest.mark.parametrize("n", [1, 2])
def test_mass_removal_keeps_I_and_lowers_E(n, rng):
    P = barycentered_simplex(n)
    for _ in range(5):
        v = random_admissible(P, rng)
        w = mass_removal(v)
        for k in (1, 2):
            assert eval_I(w, k) == pytest.approx(eval_I(v, k), rel=1e-8)
            assert eval_E(w, k).E_value <= eval_E(v, k).E_value + 1e-12
        assert eval_J(w) >= eval_J(v) * (1 - 1e-12)


def test_add_max_affine_is_pointwise_average(rng):
    P = barycentered_simplex(2)
    v, w = random_admissible(P, rng), random_admissible(P, rng)
    mid = add_max_affine(v, w)
    y = np.array([[0.0, 0.0], [0.5, -0.5], [-0.9, 1.5]])
    np.testing.assert_allclose(mid(y), 0.5 * (v(y) + w(y)), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_inequalities_hold(n, rng):
    P = barycentered_simplex(n)
    for _ in range(5):
        v, w = random_admissible(P, rng), random_admissible(P, rng)
        r = inequality_suite(v, w)
        assert r["passed"], r
        for key in ("lower_bound", "upper_bound_origin", "upper_bound_centered", "concavity"):
            assert r[key]["margin"] >= -1e-6


def test_random_admissible_is_in_Cn2(rng):
    v = random_admissible(barycentered_simplex(2), rng)
    assert v.is_admissible()
    assert barycenter_residual(v) <= 1e-8
