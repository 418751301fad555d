import numpy as np
import pytest

from fbma.convex import (MaxAffineFunction, ansatz_degree, cell_complex, conjugate_on, homogenize,
                         legendre_transform, orthant_maps, transform_to_orthant, v_star)
from fbma.errors import AdmissibilityError, DomainError
from fbma.functionals import random_admissible
from fbma.geometry import Polytope, barycentered_simplex, volume


def _grid(P, count=41):
    lo, hi = P.vertices.min(axis=0), P.vertices.max(axis=0)
    axes = [np.linspace(a, b, count) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes), axis=-1).reshape(-1, P.dimension)
    return pts[P.contains(pts)]


def test_complex_1d_cells():
    P = barycentered_simplex(1)
    v = MaxAffineFunction([[-1.0], [0.0], [1.0]], [1.0, 1.5, 1.0], P)
    cx = v.complex
    np.testing.assert_allclose(np.sort(cx.vertices[:, 0]), [-1.0, -0.5, 0.5, 1.0])
    np.testing.assert_allclose(cx.cell_volumes(), [0.5, 1.0, 0.5])
    np.testing.assert_allclose(cx.cell_centroids()[:, 0], [-0.75, 0.0, 0.75])


def test_complex_2d_volumes_partition_domain(rng):
    P = barycentered_simplex(2)
    v = random_admissible(P, rng, pieces=20, project=False)
    cx = v.complex
    assert cx.cell_volumes().sum() == pytest.approx(volume(P), rel=1e-10)
    # every cell centroid lies in its own cell
    cen = cx.cell_centroids()
    act = np.isfinite(cen).all(axis=1)
    np.testing.assert_array_equal(v.active_piece(cen[act]), np.nonzero(act)[0])


def test_inactive_pieces_are_pruned():
    P = barycentered_simplex(1)
    v = MaxAffineFunction([[0.0], [0.0]], [1.0, 0.5], P)
    assert v.complex.active.tolist() == [True, False]
    assert v.pruned().n_pieces == 1
    assert np.isnan(v.complex.cell_centroids()[1]).all()


@pytest.mark.parametrize("n", [1, 2])
def test_biconjugation_exact(n, rng):
    P = barycentered_simplex(n)
    for _ in range(5):
        v = random_admissible(P, rng, project=False)
        u = legendre_transform(v)
        # sup over the whole dual domain: all vertices of the cells of u over a big box
        big = Polytope.box(-50 * np.ones(n), 50 * np.ones(n))
        vv = conjugate_on(u, big, P)
        y = _grid(P, 31 if n == 2 else 401)
        np.testing.assert_allclose(vv(y), v(y), atol=1e-9)


def test_legendre_of_constant_on_interval():
    # v = c on [-1, 1]  =>  u(x) = |x| - c, Omega = [-c, c]
    P = barycentered_simplex(1)
    v = MaxAffineFunction([[0.0]], [0.7], P)
    u = legendre_transform(v)
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(u(x), np.abs(x[:, 0]) - 0.7, atol=1e-14)
    np.testing.assert_allclose(np.sort(u.negativity_region.vertices[:, 0]), [-0.7, 0.7])
    assert u.min_value == pytest.approx(-0.7)


def test_fenchel_young_equality(rng):
    P = barycentered_simplex(2)
    v = random_admissible(P, rng, project=False)
    u = legendre_transform(v)
    y = _grid(P, 21)
    x = v.gradient(y)
    np.testing.assert_allclose(u(x) + v(y), np.sum(x * y, axis=1), atol=1e-10)


def test_v_star_equals_minus_intercept(rng):
    P = barycentered_simplex(2)
    v = random_admissible(P, rng, project=False)
    y = _grid(P, 15)
    np.testing.assert_allclose(v_star(v, y), np.sum(y * v.gradient(y), axis=1) - v(y), atol=1e-12)
    with pytest.raises(DomainError):
        v_star(v, np.array([5.0, 5.0]))


def test_admissibility_enforced():
    P = barycentered_simplex(1)
    v = MaxAffineFunction([[1.0]], [0.5], P)   # v(-1) = -0.5
    assert not v.is_admissible()
    with pytest.raises(AdmissibilityError):
        legendre_transform(v)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        MaxAffineFunction(np.zeros((2, 2)), [1.0, 1.0], barycentered_simplex(1))
    with pytest.raises(ValueError):
        cell_complex(np.zeros((0, 1)), [], barycentered_simplex(1))


def test_json_roundtrip(rng):
    v = random_admissible(barycentered_simplex(2), rng, project=False)
    w = MaxAffineFunction.from_json(v.to_json())
    np.testing.assert_array_equal(w.slopes, v.slopes)
    np.testing.assert_array_equal(w.intercepts, v.intercepts)


@pytest.mark.parametrize("n,k", [(1, 0), (1, 1), (2, 1), (2, 3)])
def test_homogenization_degree(n, k, rng):
    m = ansatz_degree(n, k)
    assert m == pytest.approx(1 + (n + 1) / (n + k + 1))
    v = random_admissible(barycentered_simplex(n), rng, project=False)
    phi = homogenize(v, m)
    y = 0.5 * barycentered_simplex(n).vertices
    lam = np.linspace(0.5, 2.0, len(y))
    pts = np.column_stack([lam[:, None] * y, lam])
    for t in (0.3, 1.0, 2.5):
        np.testing.assert_allclose(phi(t * pts), t ** m * phi(pts), rtol=1e-13)
    with pytest.raises(DomainError):
        phi(np.r_[np.zeros(n), -1.0][None])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_orthant_map_sends_cone_to_orthant(n):
    P = barycentered_simplex(n)
    M, T = orthant_maps(P)
    np.testing.assert_allclose(T @ T.T, np.eye(n + 1), atol=1e-12)
    assert np.linalg.det(M) > 0
    # cone generators (vertex, 1) go to positive multiples of the coordinate axes
    gens = np.column_stack([P.vertices, np.ones(n + 1)])
    img = gens @ M.T
    axes = np.argmax(np.abs(img), axis=1)
    assert sorted(axes.tolist()) == list(range(n + 1))
    for i, a in enumerate(axes):
        assert img[i, a] > 0
        np.testing.assert_allclose(np.delete(img[i], a), 0.0, atol=1e-12)


def test_orthant_function_matches_phi(rng):
    P = barycentered_simplex(2)
    v = random_admissible(P, rng, project=False)
    phi = homogenize(v, ansatz_degree(2, 1))
    f = transform_to_orthant(phi)
    M = f.cone_map
    pts = np.array([[0.1, -0.2, 1.0], [0.5, 0.3, 1.4]])
    np.testing.assert_allclose(f(pts @ M.T), phi(pts), rtol=1e-12)
