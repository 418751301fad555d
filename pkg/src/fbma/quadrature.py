"""Closed-form integrals of powers of affine functions over simplices.

Every integrand the solver needs is a power of a function that is affine on
each simplex of a triangulation:

* ``(-u)^p`` on the cells of the dual function (positive integer ``p``), and
* ``v^(-(n+1+j))`` on the cells of the primal function.

Both have exact expressions in the vertex values through complete homogeneous
symmetric polynomials (Dirichlet moments for positive powers, the
Hermite-Genocchi formula for negative ones).  An adaptive cubature routine is
kept as an independent check of those formulas.
"""
from __future__ import annotations

from math import factorial

import numpy as np


def simplex_volumes(simplices: np.ndarray) -> np.ndarray:
    """Volumes of a batch of ``n``-simplices given as ``(T, n+1, n)`` arrays."""
    simplices = np.asarray(simplices, dtype=float)
    n = simplices.shape[-1]
    if simplices.shape[0] == 0:
        return np.zeros(0)
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    return np.abs(np.linalg.det(edges)) / factorial(n)


def complete_homogeneous(values: np.ndarray, p: int) -> np.ndarray:
    """h_p of each row of ``values`` (sum of all monomials of degree ``p``)."""
    values = np.asarray(values, dtype=float)
    h = np.zeros((p + 1,) + values.shape[:-1])
    h[0] = 1.0
    for j in range(values.shape[-1]):
        xj = values[..., j]
        for deg in range(1, p + 1):
            h[deg] = h[deg] + xj * h[deg - 1]
    return h[p]


def power_integrals(volumes, values, p: int) -> np.ndarray:
    """Integral of ``l^p`` over each simplex, ``l`` affine with vertex values.

    Uses ``int_S l^p = |S| n! p! / (n+p)! * h_p(l_0, ..., l_n)``.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    coef = factorial(n) * factorial(p) / factorial(n + p)
    return np.asarray(volumes) * coef * complete_homogeneous(values, p)


def barycentric_power_integrals(volumes, values, p: int) -> np.ndarray:
    """Integrals of ``t_i * l^p`` for every barycentric coordinate ``t_i``.

    Returns an array of shape ``(T, n+1)``.  Obtained by differentiating the
    degree ``p+1`` formula in the vertex values; ``dh_{p+1}/dx_i`` equals
    ``h_p`` of the value list with ``x_i`` repeated.
    """
    values = np.asarray(values, dtype=float)
    T, m = values.shape
    n = m - 1
    coef = factorial(n) * factorial(p + 1) / factorial(n + p + 1) / (p + 1)
    out = np.empty((T, m))
    for i in range(m):
        ext = np.concatenate([values, values[:, i:i + 1]], axis=1)
        out[:, i] = complete_homogeneous(ext, p)
    return np.asarray(volumes)[:, None] * coef * out


def inverse_power_integrals(volumes, values, extra: int = 0) -> np.ndarray:
    """Integral of ``l^-(n+1+extra)`` over each simplex (``l > 0``).

    Hermite-Genocchi applied to ``x^-(n+1+j)`` gives
    ``|S| n! j! / (n+j)! * h_j(1/l_0, ..., 1/l_n) / prod(l_i)``.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    coef = factorial(n) * factorial(extra) / factorial(n + extra)
    inv = 1.0 / values
    return (np.asarray(volumes) * coef * complete_homogeneous(inv, extra)
            * np.prod(inv, axis=-1))


def barycentric_inverse_integrals(volumes, values) -> np.ndarray:
    """Integrals of ``t_i * l^-(n+2)``; shape ``(T, n+1)``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    base = np.asarray(volumes) / np.prod(values, axis=-1) / (n + 1)
    return base[:, None] / values


def barycentric_inverse_second_moments(volumes, values) -> np.ndarray:
    """Integrals of ``t_i t_j * l^-(n+3)``; shape ``(T, n+1, n+1)``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    m = n + 1
    base = np.asarray(volumes) / np.prod(values, axis=-1) / ((n + 1) * (n + 2))
    inv = 1.0 / values
    out = base[:, None, None] * inv[:, :, None] * inv[:, None, :]
    out = out * (1.0 + np.eye(m))[None]
    return out


# ---------------------------------------------------------------------------
# Independent oracle: adaptive cubature on simplices
# ---------------------------------------------------------------------------

def _reference_rule(n: int, degree: int = 5):
    """Collapsed Gauss product rule on the unit n-simplex (points, weights)."""
    g, w = np.polynomial.legendre.leggauss(degree)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    if n == 1:
        return g[:, None], w
    grids = np.meshgrid(*([g] * n), indexing="ij")
    wgrids = np.meshgrid(*([w] * n), indexing="ij")
    s = np.stack([gr.ravel() for gr in grids], axis=1)
    weight = np.prod(np.stack([wg.ravel() for wg in wgrids], axis=1), axis=1)
    # Duffy map from the unit cube onto the simplex with vertices 0, e_1..e_n.
    pts = np.empty_like(s)
    rem = np.ones(len(s))
    for d in range(n):
        pts[:, d] = rem * s[:, d]
        if d < n - 1:
            rem = rem * (1.0 - s[:, d])
            weight = weight * rem
    return pts, weight


def _subdivide(simplex: np.ndarray) -> list[np.ndarray]:
    """Split a simplex into two by bisecting its longest edge."""
    m = len(simplex)
    best, bi, bj = -1.0, 0, 1
    for i in range(m):
        for j in range(i + 1, m):
            d = np.sum((simplex[i] - simplex[j]) ** 2)
            if d > best:
                best, bi, bj = d, i, j
    mid = 0.5 * (simplex[bi] + simplex[bj])
    a = simplex.copy()
    b = simplex.copy()
    a[bj] = mid
    b[bi] = mid
    return [a, b]


def adaptive_simplex_integral(f, simplex, rtol: float = 1e-10,
                              max_splits: int = 20000, degree: int = 6) -> float:
    """Integrate ``f`` over a simplex by recursive bisection.

    ``f`` maps an ``(N, n)`` array of points to ``(N,)`` values.  A cell is
    accepted when a degree-``degree`` and a degree-``degree+2`` rule agree to
    within its share of the tolerance.
    """
    simplex = np.asarray(simplex, dtype=float)
    n = simplex.shape[1]
    lo_pts, lo_w = _reference_rule(n, degree)
    hi_pts, hi_w = _reference_rule(n, degree + 2)

    def rule(s, pts, w):
        jac = abs(np.linalg.det(s[1:] - s[0])) if n > 0 else 1.0
        x = s[0] + pts @ (s[1:] - s[0])
        return jac * float(np.dot(w, f(x)))

    total_hi = rule(simplex, hi_pts, hi_w)
    stack = [(simplex, total_hi)]
    result = 0.0
    splits = 0
    scale = abs(total_hi) + 1e-300
    while stack:
        s, hi = stack.pop()
        lo = rule(s, lo_pts, lo_w)
        vol_frac = abs(np.linalg.det(s[1:] - s[0])) / (abs(np.linalg.det(simplex[1:] - simplex[0])) + 1e-300)
        if abs(hi - lo) <= rtol * scale * max(vol_frac, 1e-6) or splits >= max_splits:
            result += hi
            continue
        splits += 1
        for child in _subdivide(s):
            stack.append((child, rule(child, hi_pts, hi_w)))
    return result
