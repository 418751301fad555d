"""Convex polytopes in vertex and halfspace form.

A :class:`Polytope` carries both descriptions; each constructor derives the
missing one with qhull (convex hull or halfspace intersection).  Halfspaces
are stored as unit normals ``a`` with offsets ``c`` meaning ``<a, y> <= c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, cKDTree

from .errors import InvalidPolytopeError

#: Relative tolerance (in units of the diameter) for coplanarity and degeneracy.
GEOM_TOL = 1e-10


def dedupe_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Merge points closer than ``tol`` (keeps the first of each cluster)."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return points
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return points
    keep = np.ones(len(points), dtype=bool)
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    for i in range(len(points)):
        if find(i) != i:
            keep[i] = False
    return points[keep]


@dataclass(frozen=True, eq=False)
class Polytope:
    """Bounded convex polytope ``{y : normals @ y <= offsets}`` = conv(vertices).

    ``normals`` may be empty for a dimension-deficient point set; such a
    polytope has zero volume and no interior.
    """

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_degenerate(self) -> bool:
        return len(self.normals) == 0

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0:
            raise InvalidPolytopeError("empty vertex list")
        n = pts.shape[1]
        diam = _diameter(pts)
        if n == 1:
            lo, hi = pts.min(), pts.max()
            if hi - lo <= GEOM_TOL * max(diam, 1.0):
                return cls(np.array([[lo]]), np.zeros((0, 1)), np.zeros(0))
            return cls(np.array([[lo], [hi]]), np.array([[-1.0], [1.0]]),
                       np.array([-lo, hi]))
        try:
            hull = ConvexHull(pts)
        except (QhullError, ValueError):
            return cls(dedupe_points(pts, GEOM_TOL * max(diam, 1.0)),
                       np.zeros((0, n)), np.zeros(0))
        eq = hull.equations
        normals = eq[:, :-1]
        offsets = -eq[:, -1]
        normals, offsets = _unique_halfspaces(normals, offsets)
        return cls(pts[hull.vertices], normals, offsets)

    @classmethod
    def from_halfspaces(cls, normals, offsets, interior_point=None) -> "Polytope":
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        c = np.asarray(offsets, dtype=float).ravel()
        if len(A) == 0:
            raise InvalidPolytopeError("no halfspaces: unbounded set")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise InvalidPolytopeError("zero normal vector")
        A = A / norms[:, None]
        c = c / norms
        n = A.shape[1]
        if interior_point is None:
            center, radius = _chebyshev(A, c)
            if radius <= GEOM_TOL * max(1.0, np.abs(c).max()):
                raise InvalidPolytopeError("halfspaces have empty interior")
        else:
            center = np.asarray(interior_point, dtype=float)
        if n == 1:
            upper = c[A[:, 0] > 0] / A[A[:, 0] > 0, 0]
            lower = c[A[:, 0] < 0] / A[A[:, 0] < 0, 0]
            if len(upper) == 0 or len(lower) == 0:
                raise InvalidPolytopeError("unbounded interval")
            lo, hi = lower.max(), upper.min()
            return cls(np.array([[lo], [hi]]), np.array([[-1.0], [1.0]]),
                       np.array([-lo, hi]))
        hs = np.column_stack([A, -c])
        try:
            hsi = HalfspaceIntersection(hs, center)
        except QhullError as exc:
            raise InvalidPolytopeError(f"halfspace intersection failed: {exc}") from exc
        pts = hsi.intersections
        if not np.all(np.isfinite(pts)):
            raise InvalidPolytopeError("unbounded polyhedron")
        diam = _diameter(pts)
        pts = dedupe_points(pts, 1e3 * GEOM_TOL * max(diam, 1.0))
        return cls.from_vertices(pts)

    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        n = len(lower)
        corners = np.array(np.meshgrid(*zip(lower, upper), indexing="ij")).reshape(n, -1).T
        return cls.from_vertices(corners)

    # -- queries ------------------------------------------------------------
    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_degenerate:
            return np.zeros(len(pts), dtype=bool)
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=1)

    def contains_origin(self) -> bool:
        """Whether the origin satisfies every halfspace strictly."""
        if self.is_degenerate:
            return False
        return bool(np.all(self.offsets > GEOM_TOL * max(self.diameter, 1.0)))

    @property
    def diameter(self) -> float:
        if "diameter" not in self._cache:
            self._cache["diameter"] = _diameter(self.vertices)
        return self._cache["diameter"]

    @property
    def vertex_mean(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def simplices(self) -> np.ndarray:
        """Fan triangulation as a ``(T, n+1, n)`` array (cached)."""
        if "simplices" not in self._cache:
            if self.is_degenerate:
                self._cache["simplices"] = np.zeros((0, self.dimension + 1, self.dimension))
            else:
                self._cache["simplices"] = fan_triangulation(self.vertices)
        return self._cache["simplices"]

    def centroid(self) -> np.ndarray:
        """Volume centroid."""
        from .quadrature import simplex_volumes
        S = self.simplices()
        w = simplex_volumes(S)
        return (w[:, None] * S.mean(axis=1)).sum(axis=0) / w.sum()

    def distance_to_boundary(self, points) -> np.ndarray:
        """Signed distance to the boundary, positive inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.min(self.offsets - pts @ self.normals.T, axis=1)

    def inradius(self) -> float:
        return _chebyshev(self.normals, self.offsets)[1]

    def scaled(self, t: float, center=None) -> "Polytope":
        center = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        return Polytope.from_vertices(center + t * (self.vertices - center))

    def translated(self, x) -> "Polytope":
        return Polytope.from_vertices(self.vertices + np.asarray(x, float))

    def linear_image(self, A) -> "Polytope":
        return Polytope.from_vertices(self.vertices @ np.asarray(A, float).T)

    # -- serialization --------------------------------------------------------
    def to_json(self) -> dict:
        return {"dimension": self.dimension, "vertices": self.vertices.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Polytope":
        if "vertices" in data:
            P = cls.from_vertices(data["vertices"])
        elif "halfspaces" in data:
            hs = data["halfspaces"]
            P = cls.from_halfspaces([h["normal"] for h in hs], [h["offset"] for h in hs])
        else:
            raise InvalidPolytopeError("polytope JSON needs 'vertices' or 'halfspaces'")
        if "dimension" in data and int(data["dimension"]) != P.dimension:
            raise InvalidPolytopeError("declared dimension does not match data")
        return P


def _diameter(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(np.linalg.norm(span))


def _unique_halfspaces(normals, offsets, tol=1e-9):
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / norms[:, None]
    offsets = offsets / norms
    if len(normals) < 2:
        return normals, offsets
    scale = 1.0 + np.abs(offsets).max()
    tree = cKDTree(np.column_stack([normals, offsets / scale]))
    pairs = tree.query_pairs(tol, p=np.inf, output_type="ndarray")
    dup = np.zeros(len(normals), dtype=bool)
    dup[pairs.max(axis=1)] = True   # keep the first of each near-identical pair
    return normals[~dup], offsets[~dup]


def _chebyshev(A, c):
    """Center and radius of the largest ball inside ``{A y <= c}`` (unit rows)."""
    n = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.column_stack([A, norms]), b_ub=c,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status == 3:
        raise InvalidPolytopeError("unbounded polyhedron")
    if res.status != 0:
        raise InvalidPolytopeError(f"Chebyshev center LP failed: {res.message}")
    return res.x[:-1], float(res.x[-1])


def chebyshev_center(P: Polytope) -> np.ndarray:
    """Center of the largest inscribed ball."""
    return _chebyshev(P.normals, P.offsets)[0]


def fan_triangulation(points) -> np.ndarray:
    """Triangulate conv(points) by coning its boundary facets to the centroid.

    Returns ``(T, n+1, n)``; zero-volume simplices are dropped.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    if n == 1:
        lo, hi = pts.min(), pts.max()
        if hi <= lo:
            return np.zeros((0, 2, 1))
        return np.array([[[lo], [hi]]])
    try:
        hull = ConvexHull(pts, qhull_options="Qt")
    except (QhullError, ValueError):
        return np.zeros((0, n + 1, n))
    verts = pts[hull.vertices]
    center = verts.mean(axis=0)
    facets = pts[hull.simplices]
    S = np.concatenate([np.broadcast_to(center, (len(facets), 1, n)), facets], axis=1)
    vol = np.abs(np.linalg.det(S[:, 1:] - S[:, :1])) / factorial(n)
    scale = max(_diameter(verts), 1.0) ** n
    return S[vol > GEOM_TOL * scale]


def support_function(P: Polytope, x) -> np.ndarray | float:
    """``max_{y in P} <x, y>``, evaluated over the vertex list."""
    if len(P.vertices) == 0:
        raise InvalidPolytopeError("empty vertex list")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim <= 1 and x.size == P.dimension
    xs = x.reshape(-1, P.dimension)
    vals = np.max(xs @ P.vertices.T, axis=1)
    return float(vals[0]) if scalar else vals


def polar_body(P: Polytope) -> Polytope:
    """``{x : <x, y> <= 1 for all y in P}``; needs 0 in the interior of P."""
    if P.is_degenerate or not P.contains_origin():
        raise InvalidPolytopeError("origin not interior: polar body is unbounded")
    return Polytope.from_vertices(P.normals / P.offsets[:, None])


def volume(P: Polytope) -> float:
    """Lebesgue measure by fan triangulation (0 for flat polytopes)."""
    from .quadrature import simplex_volumes
    if P.is_degenerate:
        return 0.0
    return float(simplex_volumes(P.simplices()).sum())


def barycentered_simplex(n: int) -> Polytope:
    """``{y_i >= -1} ∩ {sum y_i <= 1}``: the standard simplex moved to barycenter 0."""
    if n < 1:
        raise InvalidPolytopeError("simplex dimension must be >= 1")
    verts = np.vstack([-np.ones(n), -np.ones((n, n)) + (n + 1) * np.eye(n)])
    return Polytope.from_vertices(verts)
