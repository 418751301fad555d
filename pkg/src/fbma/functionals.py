"""The functionals I, J, E, their first variations and the normalizations.

For a max-affine ``v`` every integral below is a finite sum of closed-form
simplex moments (see :mod:`fbma.quadrature`), so values and gradients are exact
up to rounding.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import quadrature as q
from .convex import DualFunction, MaxAffineFunction, conjugate_on, legendre_transform
from .errors import AdmissibilityError, ConvergenceError
from .geometry import chebyshev_center, polar_body, volume


@dataclass(frozen=True)
class EnergyRecord:
    I_value: float
    J_value: float
    E_value: float
    k: int
    n: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MeasurePair:
    """``dmu ~ (-u)_+^k dx`` on Omega and ``dnu ~ v^-(n+2) dy`` on P."""

    u: DualFunction
    v: MaxAffineFunction
    k: int
    mu_normalizer: float
    nu_normalizer: float
    nu_barycenter: np.ndarray

    def mu_density(self, x) -> np.ndarray:
        w = np.maximum(-np.asarray(self.u(x)), 0.0)
        return w ** self.k / self.mu_normalizer

    def nu_density(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        inside = self.v.domain.contains(y, tol=1e-12)
        out = np.zeros(len(y))
        out[inside] = np.asarray(self.v(y[inside])).reshape(-1) ** -(self.v.dimension + 2)
        return out / self.nu_normalizer


# ---------------------------------------------------------------------------
# per-cell moments
# ---------------------------------------------------------------------------

def _simplex_points_sum(simplices, weights):
    """sum_r weights[t, r] * simplices[t, r, :]  -> (T, n)."""
    return np.einsum("tr,trn->tn", weights, simplices)


@dataclass(eq=False)
class _Primal:
    """Integrals of powers of v over its cells (all piecewise closed form)."""

    v: MaxAffineFunction

    def __post_init__(self):
        self.cx = self.v.complex
        self.n = self.v.dimension
        if np.min(self.cx.values) <= 0.0:
            raise AdmissibilityError(f"v is not positive on P (min = {np.min(self.cx.values):.3e})")

    @property
    def J(self) -> float:
        cx = self.cx
        return float(np.sum(q.inverse_power_integrals(cx.volumes, cx.simplex_values))) / (self.n + 1)

    def nu_moments(self):
        """Per piece: int v^-(n+2) and int y v^-(n+2) over its cell."""
        cx = self.cx
        bary = q.barycentric_inverse_integrals(cx.volumes, cx.simplex_values)
        m = self.v.n_pieces
        N0 = np.bincount(cx.owner, weights=bary.sum(axis=1), minlength=m)
        pts = _simplex_points_sum(cx.simplices, bary)
        N1 = np.stack([np.bincount(cx.owner, weights=pts[:, d], minlength=m)
                       for d in range(self.n)], axis=1)
        return N0, N1


@dataclass(eq=False)
class _Dual:
    """Integrals of powers of -u over Omega, split by the cells of u."""

    v: MaxAffineFunction
    k: int

    def __post_init__(self):
        self.u = legendre_transform(self.v)
        self.cx = self.u.complex
        self.w = np.maximum(-self.cx.simplex_values, 0.0)

    @property
    def I(self) -> float:
        return float(np.sum(q.power_integrals(self.cx.volumes, self.w, self.k + 1))) / (self.k + 1)

    def mu_moments(self):
        """Per dual piece j (= vertex z_j of v's complex): int (-u)^k and int x(-u)^k."""
        cx = self.cx
        N = len(self.u.intercepts)
        bary = q.barycentric_power_integrals(cx.volumes, self.w, self.k)
        M0 = np.bincount(cx.owner, weights=bary.sum(axis=1), minlength=N)
        pts = _simplex_points_sum(cx.simplices, bary)
        M1 = np.stack([np.bincount(cx.owner, weights=pts[:, d], minlength=N)
                       for d in range(self.u.dimension)], axis=1)
        return M0, M1


def _vertex_adjoints(v: MaxAffineFunction, M0, M1):
    """Sensitivity weights of I with respect to the constraints at each vertex of v.

    At a vertex z_j the active pieces and facets give ``A (zdot, s) = r`` with
    rows ``[a_i, -1]`` and ``[g_f, 0]``; the derivative of ``u`` on the dual cell
    ``D_j`` is ``<zdot, x> - s``.  Returns blocks ``(vertex_ids, rows, weights)``
    with ``dI = sum_j weights_j . r_j``.
    """
    cx = v.complex
    n = v.dimension
    m = v.n_pieces
    G = v.domain.normals
    table = np.vstack([np.column_stack([v.slopes, -np.ones(m)]),
                       np.column_stack([G, np.zeros(len(G))])])
    C = np.concatenate([cx.piece_incidence, cx.facet_incidence], axis=1)
    counts = C.sum(axis=1)
    rhs = np.column_stack([-M1, M0])       # adjoint: A^T w = (-M1, M0)
    blocks = []
    simple = np.nonzero(counts == n + 1)[0]
    if len(simple):
        rr, cc = np.nonzero(C[simple])
        cols = cc.reshape(len(simple), n + 1)
        A = table[cols]
        W = np.linalg.solve(np.transpose(A, (0, 2, 1)), rhs[simple][:, :, None])[:, :, 0]
        blocks.append((simple, cols, W))
    for j in np.nonzero(counts != n + 1)[0]:
        cols = np.nonzero(C[j])[0]
        A = table[cols]
        wj = np.linalg.lstsq(A.T, rhs[j], rcond=None)[0]
        blocks.append((np.array([j]), cols[None], wj[None]))
    return blocks


def _vertex_rhs(v, cols, delta_a, delta_b, verts):
    """Right-hand sides r = -(da_i . z + db_i) for piece rows, 0 for facet rows."""
    m = v.n_pieces
    is_piece = cols < m
    idx = np.where(is_piece, cols, 0)
    r = -(np.einsum("jcn,jn->jc", delta_a[idx], verts) + delta_b[idx])
    return np.where(is_piece, r, 0.0)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def eval_I(v: MaxAffineFunction, k: int) -> float:
    """``(1/(k+1)) int (-u)_+^(k+1)`` with ``u`` the Legendre transform of ``v``."""
    if k < 0 or int(k) != k:
        raise ValueError("k must be a nonnegative integer")
    return _Dual(v, int(k)).I


def eval_J(v: MaxAffineFunction, n: int | None = None) -> float:
    """``(1/(n+1)) int_P v^-(n+1)``."""
    if n is not None and n != v.dimension:
        raise ValueError("n does not match the dimension of v")
    return _Primal(v).J


def eval_E(v: MaxAffineFunction, k: int, n: int | None = None) -> EnergyRecord:
    n = v.dimension if n is None else n
    J = eval_J(v, n)
    I = eval_I(v, k)
    return EnergyRecord(I, J, float(-np.log(I) + J ** (-1.0 / (n + 1))), int(k), int(n))


@dataclass(eq=False)
class EnergyState:
    """I, J, E of ``v`` together with their gradients in the piece parameters."""

    v: MaxAffineFunction
    k: int
    _c: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.primal = _Primal(self.v)
        self.dual = _Dual(self.v, self.k)
        self.n = self.v.dimension

    @property
    def u(self) -> DualFunction:
        return self.dual.u

    @property
    def I(self) -> float:
        if "I" not in self._c:
            self._c["I"] = self.dual.I
        return self._c["I"]

    @property
    def J(self) -> float:
        if "J" not in self._c:
            self._c["J"] = self.primal.J
        return self._c["J"]

    @property
    def E(self) -> float:
        return -np.log(self.I) + self.J ** (-1.0 / (self.n + 1))

    def record(self) -> EnergyRecord:
        return EnergyRecord(self.I, self.J, self.E, self.k, self.n)

    def _adjoints(self):
        if "adj" not in self._c:
            M0, M1 = self.dual.mu_moments()
            self._c["adj"] = _vertex_adjoints(self.v, M0, M1)
            self._c["M0"] = M0
        return self._c["adj"]

    def _nu(self):
        if "nu" not in self._c:
            self._c["nu"] = self.primal.nu_moments()
        return self._c["nu"]

    def dI(self, delta_b, delta_a=None) -> float:
        """Directional derivative of I along ``b + t db`` (and ``a + t da``)."""
        m, n = self.v.n_pieces, self.n
        delta_b = np.asarray(delta_b, dtype=float)
        delta_a = np.zeros((m, n)) if delta_a is None else np.asarray(delta_a, dtype=float)
        verts = self.v.complex.vertices
        total = 0.0
        for ids, cols, W in self._adjoints():
            r = _vertex_rhs(self.v, cols, delta_a, delta_b, verts[ids])
            total += float(np.sum(W * r))
        return total

    def grad_I(self) -> np.ndarray:
        """dI/db_i for every piece."""
        m = self.v.n_pieces
        g = np.zeros(m)
        for _, cols, W in self._adjoints():
            piece = cols < m
            # r_i = -db_i on piece rows
            np.add.at(g, cols[piece], -W[piece])
        return g

    def grad_I_slopes(self) -> np.ndarray:
        """dI/da_i for every piece, shape (m, n)."""
        m = self.v.n_pieces
        verts = self.v.complex.vertices
        g = np.zeros((m, self.n))
        for ids, cols, W in self._adjoints():
            piece = cols < m
            contrib = -W[:, :, None] * verts[ids][:, None, :]
            np.add.at(g, cols[piece], contrib[piece])
        return g

    def grad_J_slopes(self) -> np.ndarray:
        return -self._nu()[1]

    def dJ(self, delta_b, delta_a=None) -> float:
        N0, N1 = self._nu()
        val = -float(np.dot(N0, delta_b))
        if delta_a is not None:
            val -= float(np.sum(N1 * np.asarray(delta_a)))
        return val

    def grad_J(self) -> np.ndarray:
        return -self._nu()[0]

    def _chain(self, dI, dJ):
        return -dI / self.I - self.J ** (-(self.n + 2) / (self.n + 1)) * dJ / (self.n + 1)

    def dE(self, delta_b, delta_a=None) -> float:
        return self._chain(self.dI(delta_b, delta_a), self.dJ(delta_b, delta_a))

    def grad_E(self) -> np.ndarray:
        return self._chain(self.grad_I(), self.grad_J())

    def dE_scale(self) -> float:
        """d/ds E(s v) at s = 1 (I is (n+k+1)-homogeneous, J is -(n+1)-homogeneous)."""
        return -(self.n + self.k + 1) + self.J ** (-1.0 / (self.n + 1))

    def mu_mass(self) -> float:
        self._adjoints()
        return float(np.sum(self._c["M0"]))


def first_variation_E(v: MaxAffineFunction, direction, k: int, slope_direction=None) -> float:
    """``d/dt E(v_t)`` at ``t = 0`` for ``v_t`` with intercepts ``b + t*direction``.

    ``slope_direction`` optionally perturbs the slopes as well, so e.g. a
    linear perturbation ``<x0, .>`` is ``direction = 0, slope_direction = x0``.
    """
    direction = np.broadcast_to(np.asarray(direction, dtype=float), (v.n_pieces,))
    da = None
    if slope_direction is not None:
        da = np.broadcast_to(np.asarray(slope_direction, dtype=float), v.slopes.shape)
    return EnergyState(v, k).dE(direction, da)


def measure_pair(v: MaxAffineFunction, k: int) -> MeasurePair:
    st = EnergyState(v, k)
    N0, N1 = st._nu()
    nu_mass = float(N0.sum())
    return MeasurePair(st.u, v, k, st.mu_mass(), nu_mass, N1.sum(axis=0) / nu_mass)


# ---------------------------------------------------------------------------
# Optimal shift and projection onto C_{n+2}
# ---------------------------------------------------------------------------

def optimal_shift(v: MaxAffineFunction, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Minimizer ``x0`` of ``f(x) = J(v - <x, .>)`` over Omega (damped Newton from 0)."""
    cx = v.complex
    if np.min(cx.values) <= 0:
        raise AdmissibilityError("v is not positive on P")
    simp, vals, vols = cx.simplices, cx.simplex_values, cx.volumes
    n = v.dimension
    verts = cx.vertices

    def terms(x):
        lv = vals - np.einsum("trn,n->tr", simp, x)
        f = float(np.sum(q.inverse_power_integrals(vols, lv))) / (n + 1)
        b1 = q.barycentric_inverse_integrals(vols, lv)
        g = _simplex_points_sum(simp, b1).sum(axis=0)
        b2 = q.barycentric_inverse_second_moments(vols, lv)
        H = (n + 2) * np.einsum("trs,tra,tsb->ab", b2, simp, simp)
        return f, g, H, float(b1.sum())

    def admissible(x):
        return np.min(cx.values - verts @ x) > 0

    x = np.zeros(n)
    f, g, H, mass = terms(x)
    history = []
    for it in range(max_iter):
        history.append((f, float(np.linalg.norm(g)) / mass))
        if np.linalg.norm(g) <= tol * mass:
            return x
        step = -np.linalg.solve(H, g)
        t = 1.0
        while True:
            xn = x + t * step
            if admissible(xn):
                fn, gn, Hn, mn = terms(xn)
                if fn <= f + 1e-14 * abs(f):
                    break
            t *= 0.5
            if t < 1e-20:
                if np.linalg.norm(g) <= 1e-8 * mass:
                    return x
                raise ConvergenceError("line search failed in optimal_shift",
                                       {"iterations": it, "history": history})
        x, f, g, H, mass = xn, fn, gn, Hn, mn
    if np.linalg.norm(g) <= 1e-8 * mass:
        return x
    raise ConvergenceError("optimal_shift did not converge in %d iterations" % max_iter,
                           {"iterations": max_iter, "history": history})


def barycenter_residual(v: MaxAffineFunction) -> float:
    """``|int y v^-(n+2)| / int v^-(n+2)``."""
    N0, N1 = _Primal(v).nu_moments()
    return float(np.linalg.norm(N1.sum(axis=0)) / N0.sum())


def project_to_Cn2(v: MaxAffineFunction) -> MaxAffineFunction:
    """``v - <x0, .>`` with ``x0`` the optimal shift; the nu-barycenter becomes 0."""
    x0 = optimal_shift(v)
    return shifted_like(v, x0)


def shifted_like(v: MaxAffineFunction, x0) -> MaxAffineFunction:
    """``v - <x0, .>`` reusing the cell complex of ``v`` (cells do not move)."""
    x0 = np.asarray(x0, dtype=float)
    out = v.shifted(x0)
    if "complex" in v._cache:
        cx = v._cache["complex"]
        out._cache["complex"] = dataclasses.replace(
            cx, values=cx.values - cx.vertices @ x0,
            simplex_values=cx.simplex_values - np.einsum("trn,n->tr", cx.simplices, x0))
    return out


def mass_removal(v: MaxAffineFunction, recenter: bool = True) -> MaxAffineFunction:
    """Move the Monge-Ampere mass of ``u`` outside Omega onto its boundary.

    ``v~(y) = sup_{x in closure(Omega)} <x, y> - u(x)``, re-centered by the
    optimal shift.  I is unchanged and J does not decrease.
    """
    u = legendre_transform(v)
    vt = conjugate_on(u, u.negativity_region, v.domain).pruned()
    return project_to_Cn2(vt) if recenter else vt


# ---------------------------------------------------------------------------
# Inequalities
# ---------------------------------------------------------------------------

def add_max_affine(v1: MaxAffineFunction, v2: MaxAffineFunction, w1=0.5, w2=0.5) -> MaxAffineFunction:
    """``w1 v1 + w2 v2`` as a (pruned) max-affine function."""
    a = (w1 * v1.slopes[:, None, :] + w2 * v2.slopes[None, :, :]).reshape(-1, v1.dimension)
    b = (w1 * v1.intercepts[:, None] + w2 * v2.intercepts[None, :]).ravel()
    return MaxAffineFunction(a, b, v1.domain).pruned()


def inequality_suite(v: MaxAffineFunction, other: MaxAffineFunction | None = None) -> dict:
    """Evaluate the explicit-constant bounds on J, and midpoint concavity of J^(-1/(n+1)).

    Margins are ``rhs - lhs`` style quantities that must be nonnegative.
    """
    n = v.dimension
    J = eval_J(v)
    u = legendre_transform(v)
    omega = u.negativity_region
    inf_u = u.min_value
    polar_vol = volume(polar_body(omega))
    lower = polar_vol / (-inf_u)
    u0 = u.value_at_origin
    upper_origin = (n + 2) / (n + 1) * polar_vol / abs(u0)
    xc = chebyshev_center(omega)
    shifted_vol = volume(polar_body(omega.translated(-xc)))
    upper_centered = (n + 2) / (n + 1) * shifted_vol / abs(u(xc))
    J_shift = eval_J(shifted_like(v, xc))
    out = {
        "J": J,
        "lower_bound": {"lhs": (n + 1) * J, "rhs": lower, "margin": (n + 1) * J - lower},
        "upper_bound_origin": {"lhs": J, "rhs": upper_origin, "margin": upper_origin - J},
        # J(v) <= J(v - <xc,.>) for centered v, and the bound applies to the shifted function
        "upper_bound_centered": {"lhs": J_shift, "rhs": upper_centered,
                                 "center": xc.tolist(), "margin": upper_centered - J_shift,
                                 "J_unshifted": J},
        "santalo_product": volume(omega) * polar_vol,
        "abp_ratio": volume(omega) / (-inf_u) ** n,
    }
    if other is not None:
        mid = add_max_affine(v, other)
        p = -1.0 / (n + 1)
        lhs = eval_J(mid) ** p
        rhs = 0.5 * (J ** p + eval_J(other) ** p)
        out["concavity"] = {"lhs": lhs, "rhs": rhs, "margin": lhs - rhs}
    keys = ["lower_bound", "upper_bound_origin", "upper_bound_centered", "concavity"]
    out["passed"] = all(out[key]["margin"] >= -1e-6 * max(1.0, abs(out[key]["lhs"]))
                        for key in keys if key in out)
    return out


def random_admissible(P, rng, pieces: int = 12, slope_scale: float = 1.5,
                      project: bool = True) -> MaxAffineFunction:
    """A random positive max-affine function on ``P``, optionally moved into C_{n+2}.

    Some intercepts are negative so that the dual has mass outside a
    nontrivial region; the result is lifted to have minimum in ``[0.2, 1.2]``.
    """
    n = P.dimension
    a = slope_scale * rng.normal(size=(pieces, n))
    b = rng.uniform(-0.5, 1.0, size=pieces)
    v = MaxAffineFunction(a, b, P)
    v = v.plus_constant(0.2 + rng.uniform() - min(v.min_value(), 0.0) - max(v.min_value(), 0.0))
    v = v.pruned()
    return project_to_Cn2(v) if project else v
