"""Max-affine convex functions, their cell complexes and Legendre transforms.

A :class:`MaxAffineFunction` is ``v(y) = max_i <a_i, y> + b_i`` restricted to a
polytope ``P``.  Its Legendre transform ``u(x) = sup_{y in P} <x, y> - v(y)`` is
again max-affine: the sup is attained at a vertex ``z`` of the cell complex of
``v`` on ``P``, so ``u(x) = max_z <x, z> - v(z)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import HalfspaceIntersection, QhullError, cKDTree

from .errors import AdmissibilityError, DomainError, InvalidPolytopeError
from .geometry import GEOM_TOL, Polytope, chebyshev_center, fan_triangulation


@dataclass(eq=False)
class CellComplex:
    """Cells ``{y in D : piece i attains the max}`` of a max-affine function on D.

    Attributes
    ----------
    vertices : (N, n) vertices of the complex (all cells and D itself).
    values : (N,) function values there.
    piece_incidence : (N, m) bool, piece ``i`` is tight at vertex ``j``.
    facet_incidence : (N, F) bool, vertex lies on facet ``f`` of D.
    simplices : (T, n+1, n) fan triangulation of the full-dimensional cells.
    simplex_values : (T, n+1) function values at the simplex corners.
    owner : (T,) piece owning each simplex.
    volumes : (T,) simplex volumes.
    """

    vertices: np.ndarray
    values: np.ndarray
    piece_incidence: np.ndarray
    facet_incidence: np.ndarray
    simplices: np.ndarray
    simplex_values: np.ndarray
    owner: np.ndarray
    volumes: np.ndarray
    n_pieces: int

    @property
    def active(self) -> np.ndarray:
        act = np.zeros(self.n_pieces, dtype=bool)
        act[np.unique(self.owner)] = True
        return act

    def cell_volumes(self) -> np.ndarray:
        return np.bincount(self.owner, weights=self.volumes, minlength=self.n_pieces)

    def cell_centroids(self) -> np.ndarray:
        """(m, n) centroids of the cells; NaN rows for inactive pieces."""
        vol = self.cell_volumes()
        mids = self.simplices.mean(axis=1)
        cen = np.column_stack([np.bincount(self.owner, weights=self.volumes * mids[:, d],
                                           minlength=self.n_pieces)
                               for d in range(self.simplices.shape[2])])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(vol[:, None] > 0, cen / vol[:, None], np.nan)

    def interfaces(self):
        """Codimension-one faces shared by two cells.

        Returns ``(i, l, faces)`` where ``faces`` is a list of vertex arrays
        (a point for n=1, a segment for n=2, a polygon for n=3).
        """
        n = self.vertices.shape[1]
        B = self.piece_incidence.astype(np.int32)
        shared = B.T @ B
        iu, lu = np.nonzero(np.triu(shared >= n, k=1))
        act = self.active
        keep = act[iu] & act[lu]
        iu, lu = iu[keep], lu[keep]
        faces = []
        out_i, out_l = [], []
        for i, l in zip(iu, lu):
            mask = self.piece_incidence[:, i] & self.piece_incidence[:, l]
            pts = self.vertices[mask]
            if n >= 2 and np.linalg.matrix_rank(pts[1:] - pts[0], tol=1e-9) < n - 1:
                continue
            faces.append(pts)
            out_i.append(i)
            out_l.append(l)
        return np.array(out_i, dtype=int), np.array(out_l, dtype=int), faces


def _incidence_tol(values, slopes, domain) -> float:
    scale = 1.0 + np.max(np.abs(values)) + domain.diameter * (1.0 + np.max(np.abs(slopes)))
    return 1e3 * GEOM_TOL * scale


def _complex_1d(slopes, intercepts, domain: Polytope) -> CellComplex:
    a = slopes[:, 0]
    b = intercepts
    lo, hi = domain.vertices[:, 0].min(), domain.vertices[:, 0].max()
    m = len(a)
    order = np.lexsort((b, a))
    hull: list[int] = []
    for i in order:
        if hull and a[hull[-1]] == a[i]:
            hull.pop()  # same slope, larger (or equal) intercept wins
        while len(hull) >= 2:
            j, l = hull[-2], hull[-1]
            # l is useless if i overtakes j no later than l does
            if (b[j] - b[i]) * (a[l] - a[j]) <= (b[j] - b[l]) * (a[i] - a[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    hull_arr = np.array(hull)
    ha, hb = a[hull_arr], b[hull_arr]
    brk = -(hb[1:] - hb[:-1]) / (ha[1:] - ha[:-1]) if len(hull_arr) > 1 else np.zeros(0)
    # piece hull[k] is on top on [brk[k-1], brk[k]]
    left = np.concatenate([[-np.inf], brk])
    right = np.concatenate([brk, [np.inf]])
    l_clip = np.maximum(left, lo)
    r_clip = np.minimum(right, hi)
    keep = r_clip > l_clip
    owners = hull_arr[keep]
    xl, xr = l_clip[keep], r_clip[keep]
    verts = np.unique(np.concatenate([xl, xr]))[:, None]
    vals = np.max(verts @ slopes.T + intercepts, axis=1)
    tol = _incidence_tol(vals, slopes, domain)
    # adjacency comes from the hull; the tolerance only picks up exact ties,
    # since near-tangent neighbours can pass within tol of a kink they miss
    resid = vals[:, None] - (verts @ slopes.T + intercepts)
    inc = resid <= 1e-3 * tol
    vi = np.searchsorted(verts[:, 0], np.concatenate([xl, xr]))
    inc[vi, np.concatenate([owners, owners])] = True
    facet = np.column_stack([np.abs(verts[:, 0] - lo) <= tol, np.abs(verts[:, 0] - hi) <= tol])
    simp = np.stack([xl, xr], axis=1)[:, :, None]
    svals = simp[:, :, 0] * a[owners, None] + b[owners, None]
    vols = xr - xl
    # facet order must match domain.normals ([-1], [1]) for from_vertices intervals
    if domain.normals[0, 0] > 0:
        facet = facet[:, ::-1]
    return CellComplex(verts, vals, inc, facet, simp, svals, owners, vols, m)


def _cluster_labels(points: np.ndarray, tol: float) -> np.ndarray:
    """Connected components of the ``tol``-neighbour graph, labelled 0..K-1."""
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(len(points))
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                   shape=(len(points), len(points)))
    return connected_components(g, directed=False)[1]


def _fan_cells_2d(verts, inc, centers_of):
    """Vectorized fan triangulation of convex polygons given by incidence."""
    vidx, pidx = np.nonzero(inc)
    counts = np.bincount(pidx, minlength=inc.shape[1])
    good = counts >= 3
    sel = good[pidx]
    vidx, pidx = vidx[sel], pidx[sel]
    pts = verts[vidx]
    sums = np.zeros((inc.shape[1], 2))
    np.add.at(sums, pidx, pts)
    cent = sums / np.maximum(counts, 1)[:, None]
    d = pts - cent[pidx]
    ang = np.arctan2(d[:, 1], d[:, 0])
    order = np.lexsort((ang, pidx))
    vidx, pidx = vidx[order], pidx[order]
    # next vertex in the same cell (cyclic)
    starts = np.r_[0, np.nonzero(np.diff(pidx))[0] + 1]
    ends = np.r_[starts[1:], len(pidx)]
    nxt = np.arange(1, len(pidx) + 1)
    nxt[ends - 1] = starts
    tri = np.stack([cent[pidx], verts[vidx], verts[vidx[nxt]]], axis=1)
    return tri, pidx


def _complex_nd(slopes, intercepts, domain: Polytope) -> CellComplex:
    n = slopes.shape[1]
    m = len(slopes)
    G, c = domain.normals, domain.offsets
    top = float(np.max(domain.vertices @ slopes.T + intercepts)) + 1.0
    y0 = chebyshev_center(domain)
    v0 = float(np.max(slopes @ y0 + intercepts))
    t0 = 0.5 * (v0 + top)
    hs = np.zeros((m + len(G) + 1, n + 2))
    hs[:m, :n] = slopes
    hs[:m, n] = -1.0
    hs[:m, n + 1] = intercepts
    hs[m:m + len(G), :n] = G
    hs[m:m + len(G), n + 1] = -c
    hs[-1, n] = 1.0
    hs[-1, n + 1] = -top
    try:
        hsi = HalfspaceIntersection(hs, np.r_[y0, t0])
    except QhullError as exc:
        raise InvalidPolytopeError(f"cell complex construction failed: {exc}") from exc
    pts = hsi.intersections
    scale = 1.0 + domain.diameter + abs(top)
    # incidence comes from qhull's combinatorics; near-duplicate vertices are merged
    labels = _cluster_labels(pts, 1e2 * GEOM_TOL * scale)
    nv = labels.max() + 1
    full = np.zeros((nv, len(hs)), dtype=bool)
    for i, facets in enumerate(hsi.dual_facets):
        full[labels[i], facets] = True
    first = np.full(nv, -1)
    first[labels[::-1]] = np.arange(len(labels))[::-1]
    pts = pts[first]
    keep = ~full[:, -1]
    pts, full = pts[keep], full[keep]
    verts = pts[:, :n]
    vals = np.max(verts @ slopes.T + intercepts, axis=1)
    inc = full[:, :m]
    facet = full[:, m:m + len(G)]
    if n == 2:
        simp, owners = _fan_cells_2d(verts, inc, None)
    else:
        simp_list, own_list = [], []
        for i in range(m):
            cell = verts[inc[:, i]]
            if len(cell) < n + 1:
                continue
            S = fan_triangulation(cell)
            if len(S):
                simp_list.append(S)
                own_list.append(np.full(len(S), i))
        simp = np.concatenate(simp_list) if simp_list else np.zeros((0, n + 1, n))
        owners = np.concatenate(own_list) if own_list else np.zeros(0, dtype=int)
    vols = np.abs(np.linalg.det(simp[:, 1:] - simp[:, :1])) / factorial(n) if len(simp) else np.zeros(0)
    keep = vols > GEOM_TOL * domain.diameter ** n * 1e-3
    simp, owners, vols = simp[keep], owners[keep], vols[keep]
    svals = np.einsum("tkn,tn->tk", simp, slopes[owners]) + intercepts[owners, None]
    return CellComplex(verts, vals, inc, facet, simp, svals, owners, vols, m)


def cell_complex(slopes, intercepts, domain: Polytope) -> CellComplex:
    """Cell complex of ``max_i <a_i, .> + b_i`` over ``domain``."""
    slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
    intercepts = np.asarray(intercepts, dtype=float).ravel()
    if len(intercepts) == 0:
        raise ValueError("max-affine function needs at least one piece")
    if slopes.shape[1] == 1:
        return _complex_1d(slopes, intercepts, domain)
    return _complex_nd(slopes, intercepts, domain)


@dataclass(frozen=True, eq=False)
class MaxAffineFunction:
    """``v(y) = max_i <slopes[i], y> + intercepts[i]`` on the polytope ``domain``."""

    slopes: np.ndarray
    intercepts: np.ndarray
    domain: Polytope
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        if s.shape[1] != self.domain.dimension and s.shape[0] == self.domain.dimension == 1:
            s = s.T
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "intercepts", np.asarray(self.intercepts, dtype=float).ravel())
        if len(self.intercepts) == 0:
            raise ValueError("piece list must be nonempty")
        if self.slopes.shape != (len(self.intercepts), self.domain.dimension):
            raise ValueError("slopes/intercepts/domain dimension mismatch")

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def n_pieces(self) -> int:
        return len(self.intercepts)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        pts = y.reshape(-1, self.dimension)
        vals = np.max(pts @ self.slopes.T + self.intercepts, axis=1)
        if y.ndim <= 1 and y.size == self.dimension:
            return float(vals[0])
        return vals

    def active_piece(self, y) -> np.ndarray:
        """Index of the active piece; ties go to the largest index."""
        pts = np.asarray(y, dtype=float).reshape(-1, self.dimension)
        vals = pts @ self.slopes.T + self.intercepts
        top = vals.max(axis=1, keepdims=True)
        tol = 1e-12 * (1.0 + np.abs(top))
        tied = vals >= top - tol
        m = vals.shape[1]
        return m - 1 - np.argmax(tied[:, ::-1], axis=1)

    def gradient(self, y) -> np.ndarray:
        return self.slopes[self.active_piece(y)]

    @property
    def complex(self) -> CellComplex:
        if "complex" not in self._cache:
            self._cache["complex"] = cell_complex(self.slopes, self.intercepts, self.domain)
        return self._cache["complex"]

    def min_value(self) -> float:
        return float(self.complex.values.min())

    def max_value(self) -> float:
        return float(np.max(self(self.domain.vertices)))

    def is_admissible(self) -> bool:
        return self.min_value() > 0.0

    def require_admissible(self) -> None:
        if not self.is_admissible():
            raise AdmissibilityError(f"v is not positive on P (min = {self.min_value():.3e})")

    # -- derived functions ------------------------------------------------------
    def with_intercepts(self, intercepts) -> "MaxAffineFunction":
        return MaxAffineFunction(self.slopes, intercepts, self.domain)

    def shifted(self, x0) -> "MaxAffineFunction":
        """``v - <x0, .>``."""
        return MaxAffineFunction(self.slopes - np.asarray(x0, float), self.intercepts, self.domain)

    def scaled(self, s: float) -> "MaxAffineFunction":
        return MaxAffineFunction(s * self.slopes, s * self.intercepts, self.domain)

    def plus_constant(self, c: float) -> "MaxAffineFunction":
        return MaxAffineFunction(self.slopes, self.intercepts + c, self.domain)

    def pruned(self) -> "MaxAffineFunction":
        """Drop pieces whose cell in the domain has empty interior."""
        act = self.complex.active
        if act.all():
            return self
        return MaxAffineFunction(self.slopes[act], self.intercepts[act], self.domain)

    # -- serialization ------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "pieces": [{"slope": s.tolist(), "intercept": float(b)}
                       for s, b in zip(self.slopes, self.intercepts)],
            "domain": self.domain.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MaxAffineFunction":
        P = Polytope.from_json(data["domain"])
        pieces = data["pieces"]
        slopes = np.array([np.atleast_1d(p["slope"]) for p in pieces], dtype=float)
        return cls(slopes, [p["intercept"] for p in pieces], P)


@dataclass(frozen=True, eq=False)
class DualFunction:
    """Legendre transform ``u`` of a max-affine ``v`` on ``P``.

    ``u(x) = max_j <z_j, x> - v(z_j)`` over the vertices ``z_j`` of the cell
    complex of ``v``; ``negativity_region`` is the closure of ``{u < 0}``.
    """

    slopes: np.ndarray
    intercepts: np.ndarray
    primal_domain: Polytope
    negativity_region: Polytope
    min_value: float
    min_point: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return self.slopes.shape[1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.dimension)
        vals = np.max(pts @ self.slopes.T + self.intercepts, axis=1)
        if x.ndim <= 1 and x.size == self.dimension:
            return float(vals[0])
        return vals

    def gradient(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float).reshape(-1, self.dimension)
        return self.slopes[np.argmax(pts @ self.slopes.T + self.intercepts, axis=1)]

    @property
    def complex(self) -> CellComplex:
        """Cells of ``u`` restricted to the closure of Omega."""
        if "complex" not in self._cache:
            self._cache["complex"] = cell_complex(self.slopes, self.intercepts,
                                                  self.negativity_region)
        return self._cache["complex"]

    @property
    def value_at_origin(self) -> float:
        return self(np.zeros(self.dimension))

    def as_max_affine(self, domain: Polytope) -> MaxAffineFunction:
        return MaxAffineFunction(self.slopes, self.intercepts, domain)


def legendre_transform(v: MaxAffineFunction) -> DualFunction:
    """Exact polyhedral Legendre transform of an admissible max-affine ``v``."""
    v.require_admissible()
    cx = v.complex
    z = cx.vertices
    vals = cx.values
    nz = np.linalg.norm(z, axis=1) > 0
    omega = Polytope.from_halfspaces(z[nz], vals[nz], interior_point=np.zeros(v.dimension))
    # argmin u = subdifferential of v at 0; take the slope of an active piece there
    i0 = v.active_piece(np.zeros(v.dimension))[0]
    return DualFunction(z.copy(), -vals.copy(), v.domain, omega,
                        min_value=-v(np.zeros(v.dimension)),
                        min_point=v.slopes[i0].copy())


def conjugate_on(u: DualFunction, region: Polytope, domain: Polytope) -> MaxAffineFunction:
    """``y -> sup_{x in region} <x, y> - u(x)`` as a max-affine function on ``domain``.

    The sup of a convex polyhedral function minus a linear one over a polytope
    is attained at a vertex of the cells of ``u`` over ``region``.
    """
    cx = cell_complex(u.slopes, u.intercepts, region)
    w = cx.vertices
    return MaxAffineFunction(w.copy(), -cx.values.copy(), domain)


def v_star(v: MaxAffineFunction, y, tol: float = 1e-12) -> np.ndarray | float:
    """``<y, grad v(y)> - v(y)``; on the cell of piece ``i`` this is ``-b_i``."""
    y = np.asarray(y, dtype=float)
    pts = y.reshape(-1, v.dimension)
    if not np.all(v.domain.contains(pts, tol=tol * max(1.0, v.domain.diameter))):
        raise DomainError("v* evaluated outside the domain of v")
    out = -v.intercepts[v.active_piece(pts)]
    if y.ndim <= 1 and y.size == v.dimension:
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# Homogenization over the cone C(P)
# ---------------------------------------------------------------------------

def ansatz_degree(n: int, k: int) -> float:
    """Degree ``m = 1 + (n+1)/(n+k+1)`` that turns the equation into the Calabi-type ansatz."""
    return 1.0 + (n + 1) / (n + k + 1)


@dataclass(frozen=True)
class HomogenizedFunction:
    """``phi(lambda*y, lambda) = (lambda * v(y))^m`` on the cone over ``v.domain``."""

    v: object  # MaxAffineFunction or any callable with a ``domain``
    degree: float

    def _split(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lam = pts[:, -1]
        if np.any(lam <= 0):
            raise DomainError("cone points need lambda > 0")
        y = pts[:, :-1] / lam[:, None]
        dom = self.v.domain
        if not np.all(dom.contains(y, tol=1e-12 * max(1.0, dom.diameter))):
            raise DomainError("z / lambda outside P")
        return y, lam

    def __call__(self, points) -> np.ndarray:
        y, lam = self._split(points)
        return (lam * np.asarray(self.v(y)).reshape(-1)) ** self.degree


def homogenize(v: MaxAffineFunction, m: float) -> HomogenizedFunction:
    if m <= 1:
        raise ValueError("homogenization degree must exceed 1")
    v.require_admissible()
    return HomogenizedFunction(v, float(m))


def _regular_simplex(n: int) -> np.ndarray:
    """Vertices r_0..r_n of a regular simplex with <r_i, r_j> = -1 (i != j)."""
    q = np.eye(n + 1) - 1.0 / (n + 1)
    # orthonormal basis of the hyperplane sum = 0
    basis = np.linalg.svd(q)[0][:, :n]
    return np.sqrt(n + 1) * q @ basis


@dataclass(frozen=True)
class OrthantFunction:
    """``phi(M^-1 x)`` for a cone function ``phi`` over C(P); defined on the positive orthant."""

    phi: HomogenizedFunction
    cone_map: np.ndarray        # M: C(P) -> orthant
    rotation: np.ndarray        # orthogonal part T

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if np.any(x <= 0):
            raise DomainError("orthant function evaluated outside the open orthant")
        return self.phi(np.linalg.solve(self.cone_map, x.T).T)


def orthant_maps(P: Polytope):
    """Linear map ``M`` sending C(P) onto the positive orthant, and its rotation part.

    ``M = T @ diag(L, 1)`` where ``L`` carries the simplex ``P`` (barycenter 0)
    onto a regular simplex with ``<r_i, r_j> = -1`` and ``T`` is orthogonal
    with ``T e_{n+1} = (1, ..., 1)/sqrt(n+1)``.  ``M`` is itself orthogonal
    exactly when ``P`` is already such a regular simplex (e.g. ``[-1, 1]``).
    """
    n = P.dimension
    V = P.vertices
    if len(V) != n + 1:
        raise DomainError("orthant transform needs a simplex")
    if np.linalg.norm(V.mean(axis=0)) > 1e-9 * max(1.0, P.diameter):
        raise DomainError("simplex must have its barycenter at the origin")
    R = _regular_simplex(n)
    L = np.linalg.solve(V[:n], R[:n]).T
    # L V^T = R^T on all vertices (both centered, so n of them determine L)
    U = np.column_stack([R, np.ones(n + 1)]) / np.sqrt(n + 1)   # rows u_i
    T = U.copy()        # T u_i = e_i  <=>  T = sum e_i u_i^T
    A = np.eye(n + 1)
    A[:n, :n] = L
    M = T @ A
    if np.linalg.det(M) < 0:
        # swap two output coordinates: keeps the orthant, flips orientation
        M[[0, 1]] = M[[1, 0]]
        T[[0, 1]] = T[[1, 0]]
    return M, T


def transform_to_orthant(phi: HomogenizedFunction) -> OrthantFunction:
    M, T = orthant_maps(phi.v.domain)
    return OrthantFunction(phi, M, T)
