from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from fbma.convex import MaxAffineFunction, legendre_transform
from fbma.errors import DomainError
from fbma.geometry import Polytope, barycentered_simplex
from fbma.verification import (Mollified, ansatz_constant, ansatz_residual, boundary_remainder,
                               fit_boundary_exponent, free_boundary_convexity_check,
                               klartag_transform_check, ma_residual, n0_anchor,
                               ode_shooting_oracle, pushforward_check, run_battery)
from fbma.verification.battery import VerificationOptions, default_exponent_window
from fbma.verification.checks import ansatz_constant_chain, middle_samples, trace_level_set
from fbma.verification.mollify import bump

# ---------------------------------------------------------------------------
# shooting oracle
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 3])
def test_oracle_boundary_condition(k):
    prof = ode_shooting_oracle(k)
    assert abs(prof.boundary_vstar) <= 1e-10
    assert abs(prof.vstar(np.array([1.0]))[0]) <= 1e-9
    assert prof(np.array([0.3]))[0] == pytest.approx(prof(np.array([-0.3]))[0], rel=1e-15)


@pytest.mark.parametrize("k", [1, 2])
def test_oracle_matches_independent_integration(k):
    # re-integrate from y = 0 with a different (implicit) method and compare
    prof = ode_shooting_oracle(k)

    def rhs(y, s):
        v, dv = s
        return [dv, v ** -3 * (v - y * dv) ** -k]

    ys = np.linspace(0.0, 0.9, 50)
    sol = solve_ivp(rhs, (0.0, 0.9), [prof.v0, 0.0], method="Radau", rtol=1e-12, atol=1e-14,
                    t_eval=ys)
    np.testing.assert_allclose(prof(ys), sol.y[0], rtol=1e-8)
    np.testing.assert_allclose(prof.derivative(ys), sol.y[1], atol=1e-8)


def test_oracle_rejects_k0_and_n2():
    with pytest.raises(ValueError):
        ode_shooting_oracle(0)
    with pytest.raises(ValueError):
        ode_shooting_oracle(1, n=2)


@pytest.mark.parametrize("k", [1, 2])
def test_oracle_local_exponent(k):
    prof = ode_shooting_oracle(k)
    fit = fit_boundary_exponent(prof, 1, (0.0, 0.3), k=k, domain=Polytope.box([-1.0], [1.0]))
    assert fit.relative_error <= 0.01
    assert fit.coefficient > 0
    # the remainder itself behaves like t^gamma close to the endpoint
    t, r = boundary_remainder(prof)
    sel = (t > 1e-4) & (t < 1e-2)
    slope = np.polyfit(np.log(t[sel]), np.log(r[sel]), 1)[0]
    assert slope == pytest.approx(1 + 1 / (k + 1), rel=0.02)


def test_exponent_window_guard(oracle_k1):
    with pytest.raises(DomainError):
        fit_boundary_exponent(oracle_k1, 1, (0.0, 0.9), k=1, domain=Polytope.box([-1.0], [1.0]))
    with pytest.raises(ValueError):
        fit_boundary_exponent(oracle_k1, 1, (0.3, 0.1), domain=Polytope.box([-1.0], [1.0]))


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


def test_ansatz_constants_exact():
    assert ansatz_constant(1, 1) == Fraction(250, 81)
    assert ansatz_constant(1, 0) == 4
    for n in range(1, 5):
        for k in range(0, 5):
            assert ansatz_constant_chain(n, k) == ansatz_constant(n, k)


@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_n0_anchor_is_constant(k):
    vals = n0_anchor(k, np.linspace(0.1, 5.0, 20))
    np.testing.assert_allclose(vals, vals[0], rtol=1e-12)
    assert vals[0] == pytest.approx(float(ansatz_constant(0, k)), rel=1e-12)


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------


def test_mollified_kink_1d():
    # |x| has second derivative 2 delta_0, so (|x| * rho_h)'' = 2 rho_h
    h = 0.3
    mol = Mollified([[-1.0], [1.0]], [0.0, 0.0], h)
    x = np.linspace(-0.5, 0.5, 21)[:, None]
    val, grad, hess = mol.value_gradient_hessian(x)
    np.testing.assert_allclose(hess[:, 0, 0], 2 * bump(x, h), atol=1e-10)
    # far from the kink the smoothing is invisible
    np.testing.assert_allclose(val[np.abs(x[:, 0]) > h], np.abs(x[np.abs(x[:, 0]) > h, 0]), atol=1e-12)


def test_mollified_ridge_2d():
    # |x1| in 2D: H11 = 2 * marginal of the 2D bump, other entries vanish
    h = 0.4
    mol = Mollified([[-1.0, 0.0], [1.0, 0.0]], [0.0, 0.0], h)
    x = np.array([[0.0, 0.0], [0.1, 0.05], [-0.25, -0.1]])
    H = mol.hessian(x)
    for i, (a, _) in enumerate(x):
        lim = np.sqrt(max(h * h - a * a, 0.0))
        marg = quad(lambda s: bump(np.array([[a, s]]), h)[0], -lim, lim, epsabs=1e-13)[0]
        assert H[i, 0, 0] == pytest.approx(2 * marg, rel=1e-6)
        assert abs(H[i, 0, 1]) < 1e-10 and abs(H[i, 1, 1]) < 1e-10


def test_mollified_smooth_function_1d():
    # tangent lines of sqrt(y^2 + 1): mollified Hessian approaches (1 + y^2)^(-3/2)
    t = np.linspace(-1.5, 1.5, 3001)
    f, df = np.sqrt(t ** 2 + 1), t / np.sqrt(t ** 2 + 1)
    mol = Mollified(df[:, None], f - t * df, 0.05)
    y = np.linspace(-0.8, 0.8, 17)[:, None]
    np.testing.assert_allclose(mol.hessian(y)[:, 0, 0], (1 + y[:, 0] ** 2) ** -1.5, rtol=2e-3)


def test_mollifier_rejects_bad_input():
    with pytest.raises(ValueError):
        Mollified([[1.0]], [0.0], 0.0)
    with pytest.raises(NotImplementedError):
        Mollified(np.ones((2, 3)), [0.0, 1.0], 0.1)


# ---------------------------------------------------------------------------
# convexity of the free boundary
# ---------------------------------------------------------------------------


def test_square_level_set_is_rejected():
    # u = max(|x1| - 1, |x2| - 1)
    slopes = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    rep = free_boundary_convexity_check((slopes, -np.ones(4)))
    assert rep.convex
    assert not rep.strictly_convex
    assert not rep.passed
    assert rep.longest_flat_run > 0.1 * rep.diameter


def test_disk_like_level_set_passes():
    th = 2 * np.pi * np.arange(2000) / 2000
    slopes = np.column_stack([np.cos(th), np.sin(th)])
    rep = free_boundary_convexity_check((slopes, -np.ones(len(th))), resolution=720)
    assert rep.passed
    assert rep.min_defect >= -1e-9


def test_trace_level_set_needs_interior_center():
    slopes = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    with pytest.raises(DomainError):
        trace_level_set(slopes, -np.ones(4), np.array([3.0, 0.0]), 32)
    with pytest.raises(DomainError):
        trace_level_set(slopes[:3], -np.ones(3), np.zeros(2), 32)


# ---------------------------------------------------------------------------
# checks on a solved 1D pair
# ---------------------------------------------------------------------------


def test_middle_samples_stay_inside():
    P = barycentered_simplex(2)
    pts = middle_samples(P, 300, 0.8, seed=3)
    assert len(pts) == 300
    assert np.all(P.scaled(0.8).contains(pts, tol=1e-12))


def test_residual_on_solved_pair(solved_1d_k1):
    v, u, _ = solved_1d_k1
    r = ma_residual(v, 1)
    assert r.max_relative_residual <= 5e-2
    assert r.excluded_count == 0


def test_klartag_on_solved_pair(solved_1d_k1):
    v, u, _ = solved_1d_k1
    r = klartag_transform_check(u, 1)
    assert r.relative_spread <= 0.10
    assert r.scaling_ratio == pytest.approx(r.scaling_expected, rel=1e-6)
    assert r.excluded_count == 0


def test_ansatz_on_solved_pair(solved_1d_k1):
    v, u, _ = solved_1d_k1
    r = ansatz_residual(v, 1)
    assert r.target == pytest.approx(250 / 81)
    assert r.max_relative_deviation <= 0.05
    assert r.degree_check_error <= 1e-12
    # d phi / d lambda decays toward the vertices of P; at 64 pieces the
    # boundary piece still carries |v*| of order 0.1, so the limit is not 0
    for ratios in r.boundary_ratios:
        assert np.all(np.diff(ratios[:4]) < 0)    # t = 0.99 and 1 share the last cell
        assert 0 <= ratios[-1] < 0.3


def test_pushforward_on_solved_pair(solved_1d_k1):
    v, u, _ = solved_1d_k1
    r = pushforward_check(u, v, 1, N=100_000, perturbations=10, seed=1)
    assert r.moments_passed
    assert r.gaps_passed
    assert np.all(np.array(r.gaps) >= -np.array(r.gap_tolerances))


def test_battery_on_solved_pair(solved_1d_k1):
    v, u, _ = solved_1d_k1
    opts = VerificationOptions(mc_samples=50_000, perturbations=5)
    results, verdicts = run_battery(v, 1, opts)
    assert all(verdicts.values()), {k: results[k] for k, ok in verdicts.items() if not ok}
    assert "free_boundary_convexity" not in verdicts
    assert set(verdicts) >= {"barycenter", "ma_residual", "exponent_fits", "klartag", "ansatz"}


def test_battery_skip_and_unknown_options(solved_1d_k1):
    v, _, _ = solved_1d_k1
    opts = VerificationOptions(skip=["pushforward", "klartag", "ansatz", "inequalities"])
    _, verdicts = run_battery(v, 1, opts)
    assert "pushforward" not in verdicts
    with pytest.raises(ValueError):
        VerificationOptions.from_json({"nope": 1})


def test_exponent_fit_on_solved_pair(solved_1d_k1):
    v, _, _ = solved_1d_k1
    for face in (0, 1):
        fit = fit_boundary_exponent(v, face, default_exponent_window(v), k=1)
        assert fit.relative_error <= 0.05


def test_exponent_fit_2d_uses_cells():
    # tangent planes of t^(3/2), t the distance to facet 0: -v* = 1.5 d t^(1/2) - 0.5 t^(3/2)
    P = barycentered_simplex(2)
    nrm, d = P.normals[0], P.offsets[0]
    t = np.geomspace(1e-4, 1.5, 300)
    slopes = -1.5 * np.sqrt(t)[:, None] * nrm[None, :]
    intercepts = 1.5 * d * np.sqrt(t) - 0.5 * t ** 1.5
    v = MaxAffineFunction(slopes, intercepts, P)
    fit = fit_boundary_exponent(v, 0, (0.0, 0.3), k=1)
    assert fit.relative_error <= 0.01
    assert fit.coefficient == pytest.approx(1.0, rel=0.05)
    with pytest.raises(DomainError):
        fit_boundary_exponent(v, 0, (0.0, 0.3), k=1, band=5.0)


def test_legendre_pair_of_solution_has_bounded_omega(solved_1d_k1):
    v, u, _ = solved_1d_k1
    assert u.value_at_origin < 0
    assert legendre_transform(v).negativity_region.vertices.shape == (2, 1)
