"""Energy minimization over barycenter-normalized max-affine functions.

Writing ``v_{a,b} = max_i <a_i, y> + b_i``, the shift-maximized and
scale-minimized energy is

    G(a, b) = -log I(v) - (n+k+1)/(n+1) * log min_x J(v - <x, .>),

which differs from ``min_s E(s * project(v))`` by the constant
``(n+k+1)(1 - log(n+k+1))``.  ``G`` is invariant under shifts and dilations, so
the constraint ``v in C_{n+2}`` and the optimal scale are imposed in closed form
after each evaluation, and by the envelope theorem the gradient of ``G`` is the
plain gradient of its two terms at the projected function.

Each stage places the slopes on a regular lattice over the closure of
``Omega = {u < 0}`` of the current iterate (intercepts ``-u(w)``, i.e. the
discrete mass-removal step) and then runs L-BFGS on the intercepts.  In 2D,
once the iterate is fine enough, slopes are instead chosen so that their
cells land near a lattice of the domain graded toward its boundary, using
the current gradient map.  Pieces whose cells collapse are revived and the
run is repeated.  A final stage optionally polishes slopes and intercepts
jointly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .convex import DualFunction, MaxAffineFunction, legendre_transform
from .errors import AdmissibilityError, ConvergenceError
from .functionals import (EnergyRecord, EnergyState, barycenter_residual, inequality_suite,
                          mass_removal, optimal_shift, project_to_Cn2, shifted_like)
from .geometry import Polytope, barycentered_simplex, chebyshev_center, volume

log = logging.getLogger(__name__)

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget-exhausted"
ERROR = "error"


@dataclass
class SolverConfig:
    k: int
    polytope: Polytope
    piece_budget: int = 64
    max_outer_iterations: int = 3
    energy_tolerance: float = 1e-6
    refinement_schedule: list = field(default_factory=lambda: [8, 16, 32, 64])
    random_seed: int = 0
    polish_slopes: bool | None = None     # None: on for n = 1
    max_inner_iterations: int = 5000
    gradient_tolerance: float = 1e-11
    polish_iterations: int = 20000
    revive_cycles: int = 2
    boundary_depth: float = 0.35          # graded layers (n = 2), in units of the inradius

    def __post_init__(self):
        self.validate()

    @property
    def dimension(self) -> int:
        return self.polytope.dimension

    def validate(self) -> None:
        n = self.dimension
        if int(self.k) != self.k or self.k < 0:
            raise ValueError("k must be a nonnegative integer")
        if self.piece_budget < n + 2:
            raise ValueError(f"piece_budget must be at least n+2 = {n + 2}")
        if self.energy_tolerance <= 0 or self.gradient_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.revive_cycles < 0 or self.boundary_depth < 0:
            raise ValueError("revive_cycles and boundary_depth must be nonnegative")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be positive")
        if not self.refinement_schedule:
            raise ValueError("refinement_schedule must be nonempty")
        if any(int(m) != m or m < n + 2 for m in self.refinement_schedule):
            raise ValueError("schedule entries must be integers >= n+2")
        if max(self.refinement_schedule) > self.piece_budget:
            raise ValueError("refinement_schedule exceeds piece_budget")
        if not self.polytope.contains_origin():
            raise ValueError("the origin must be interior to P")

    @property
    def polish(self) -> bool:
        return self.dimension == 1 if self.polish_slopes is None else bool(self.polish_slopes)

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["polytope"] = self.polytope.to_json()
        d["refinement_schedule"] = list(self.refinement_schedule)
        return d

    @classmethod
    def from_json(cls, data: dict) -> "SolverConfig":
        data = dict(data)
        if "polytope" in data:
            P = Polytope.from_json(data.pop("polytope"))
        elif "simplex" in data:
            P = barycentered_simplex(int(data.pop("simplex")))
        else:
            raise ValueError("config needs 'polytope' or 'simplex'")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "k" not in data:
            raise ValueError("config needs 'k'")
        return cls(polytope=P, **data)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class SolveReport:
    energy_history: list
    final_record: EnergyRecord
    barycenter_residual: float
    vstar_boundary_max: float
    convergence_flag: str
    equation_scale: float
    stages: list = field(default_factory=list)
    ma_residual_summary: dict | None = None
    inequality_results: dict | None = None
    exponent_fits: list = field(default_factory=list)
    mass_removal_log: list = field(default_factory=list)
    runtime_seconds: float = 0.0
    message: str = ""

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["final_record"] = self.final_record.to_json() if self.final_record else None
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


# ---------------------------------------------------------------------------
# slope sampling
# ---------------------------------------------------------------------------

def _triangular_lattice(region: Polytope, h: float) -> np.ndarray:
    lo = region.vertices.min(axis=0) - h
    hi = region.vertices.max(axis=0) + h
    dy = h * np.sqrt(3.0) / 2.0
    rows = []
    for j in range(int((hi[1] - lo[1]) / dy) + 2):
        xs = np.arange(lo[0] + (j % 2) * h / 2.0, hi[0] + h, h)
        rows.append(np.column_stack([xs, np.full(len(xs), lo[1] + j * dy)]))
    pts = np.vstack(rows)
    # keep interior points at least 0.3 h from the boundary; the boundary gets its own points
    return pts[region.contains(pts, tol=-0.3 * h)]


def _boundary_points(region: Polytope, h: float) -> np.ndarray:
    V = region.vertices
    c = V.mean(axis=0)
    V = V[np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))]
    out = []
    for i in range(len(V)):
        p, q = V[i], V[(i + 1) % len(V)]
        cnt = max(int(np.ceil(np.linalg.norm(q - p) / h)), 1)
        s = np.arange(cnt) / cnt
        out.append(p + s[:, None] * (q - p))
    return np.vstack(out)


def slope_lattice(region: Polytope, m: int, seed: int = 0) -> np.ndarray:
    """About ``m`` well-spread points covering ``region`` (its vertices included)."""
    n = region.dimension
    if n == 1:
        lo, hi = region.vertices[:, 0].min(), region.vertices[:, 0].max()
        return np.linspace(lo, hi, m)[:, None]
    if n == 2:
        def build(h):
            inner = _triangular_lattice(region, h)
            if len(inner) == 0:      # coarse lattices still need one interior slope
                inner = chebyshev_center(region)[None, :]
            return np.vstack([inner, _boundary_points(region, h)])
        area = volume(region)
        h = np.sqrt(area / (m * np.sqrt(3.0) / 2.0))
        lo_h, hi_h = 0.3 * h, 3.0 * h
        best = build(h)
        for _ in range(30):
            if len(best) == m:
                break
            if len(best) > m:
                lo_h = h
            else:
                hi_h = h
            h = np.sqrt(lo_h * hi_h)
            cand = build(h)
            if abs(len(cand) - m) < abs(len(best) - m) or len(best) > m >= len(cand):
                best = cand
            if hi_h / lo_h < 1.0001:
                break
        return best
    # n >= 3: scrambled Sobol points in the bounding box, plus the vertices
    lo = region.vertices.min(axis=0)
    hi = region.vertices.max(axis=0)
    frac = volume(region) / np.prod(hi - lo)
    need = max(m - len(region.vertices), 1)
    sampler = qmc.Sobol(n, scramble=True, seed=seed)
    pts = np.zeros((0, n))
    while len(pts) < need:
        cand = qmc.scale(sampler.random(int(2 ** np.ceil(np.log2(need / frac + 1)))), lo, hi)
        pts = np.vstack([pts, cand[region.contains(cand)]])
    return np.vstack([pts[:need], region.vertices])


def _corner_rings(P: Polytope, radius: float, rings: int, h: float) -> np.ndarray:
    """Arcs around each vertex of a polygon at radii ``radius * (j/rings)^2``."""
    V = P.vertices
    c = V.mean(axis=0)
    V = V[np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))]
    out = []
    for i in range(len(V)):
        p, prev, nxt = V[i], V[i - 1], V[(i + 1) % len(V)]
        a0 = np.arctan2(*(nxt - p)[::-1])
        a1 = np.arctan2(*(prev - p)[::-1])
        span = (a1 - a0) % (2 * np.pi)
        for j in range(1, rings + 1):
            r = radius * (j / rings) ** 2
            cnt = max(2, int(np.ceil(span * r / h)) + 1)
            ang = a0 + span * np.linspace(0.0, 1.0, cnt)
            out.append(p + r * np.column_stack([np.cos(ang), np.sin(ang)]))
    return np.vstack(out)


def graded_sites(P: Polytope, m: int, depth: float, layers: int = 10) -> np.ndarray:
    """About ``m`` points of a 2D polygon: a triangular lattice plus boundary layers.

    Layer ``l`` sits at distance ``depth * (l/L)^2`` from the boundary, so the
    normal spacing shrinks quadratically toward it; its tangential spacing
    grows from the lattice spacing at ``depth`` to three times it on the
    boundary.  Within ``depth`` of a vertex the layers are replaced by arcs
    graded the same way in the distance to the vertex.  Small ``m`` get fewer
    layers, so the result never has more than ``m`` points.
    """
    layers = max(1, min(layers, m // 24))
    while True:
        pts = _graded_sites(P, m, depth, layers)
        if len(pts) <= m or layers == 1:
            return pts[:m]
        layers -= 1


def _graded_sites(P: Polytope, m: int, depth: float, layers: int) -> np.ndarray:
    inner = Polytope.from_halfspaces(P.normals, P.offsets - depth)
    shells = [P] + [Polytope.from_halfspaces(P.normals, P.offsets - depth * (l / layers) ** 2)
                    for l in range(1, layers + 1)]
    stretch = [1.0 + 2.0 * (1.0 - l / layers) for l in range(layers + 1)]

    def build(h):
        pts = np.vstack([_boundary_points(sh, h * f) for sh, f in zip(shells, stretch)]
                        + [_triangular_lattice(inner, h)])
        near = np.min(np.linalg.norm(pts[:, None, :] - P.vertices[None, :, :], axis=2), axis=1)
        return np.vstack([pts[near > depth], P.vertices, _corner_rings(P, depth, layers, h)])

    lo_h, hi_h = 1e-3 * P.diameter, P.diameter
    best = build(hi_h)
    for _ in range(60):
        h = np.sqrt(lo_h * hi_h)
        cand = build(h)
        if len(cand) > m:
            lo_h = h
        else:
            hi_h, best = h, cand
        if hi_h / lo_h < 1.001:
            break
    return best


def _gradient_pairs(v: MaxAffineFunction, u: DualFunction):
    """Points of P paired with (approximate) gradients of ``v`` there.

    Cell centroids carry their slopes; vertices of the complex on the
    boundary of P carry the point of the boundary of Omega whose dual
    piece they are, since grad v maps the boundary of P onto that of Omega.
    """
    cx = v.complex
    act = cx.cell_volumes() > 0
    ys, ws = [cx.cell_centroids()[act]], [v.slopes[act]]
    om = u.negativity_region.vertices
    bd = cx.facet_incidence.any(axis=1)
    z, val = cx.vertices[bd], cx.values[bd]
    gap = np.abs(om @ z.T - val[None, :])          # (vertices of Omega, boundary z)
    tol = 1e-7 * max(1.0, float(np.abs(val).max())) * max(1.0, float(np.abs(om).max()))
    for j in range(len(z)):
        on = gap[:, j] <= tol * max(1.0, np.linalg.norm(z[j]))
        if on.any():
            ys.append(z[j][None, :])
            ws.append(om[on].mean(axis=0)[None, :])
    return np.vstack(ys), np.vstack(ws)


def graded_slopes(v: MaxAffineFunction, u: DualFunction, m: int, depth: float) -> np.ndarray:
    """Slopes whose cells should sit near :func:`graded_sites` of the domain (n = 2)."""
    from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
    Y, W = _gradient_pairs(v, u)
    sites = graded_sites(v.domain, m, depth)
    w = LinearNDInterpolator(Y, W)(sites)
    bad = ~np.all(np.isfinite(w), axis=1)
    if bad.any():
        w[bad] = NearestNDInterpolator(Y, W)(sites[bad])
    return w


# ---------------------------------------------------------------------------
# normalization helpers
# ---------------------------------------------------------------------------

def _admissible_shift(v: MaxAffineFunction) -> MaxAffineFunction:
    """Shift by the active slope at 0 so that v >= v(0) > 0 on P."""
    y0 = np.zeros(v.dimension)
    if v(y0) <= 0:
        raise AdmissibilityError("v(0) <= 0: no shift makes v positive")
    return shifted_like(v, v.slopes[v.active_piece(y0)[0]])


def equation_constant(state: EnergyState) -> float:
    """Constant c with det D^2 v * v^(n+2) * (-v*)^k = c at a critical point of G."""
    n, k = state.n, state.k
    return (n + k + 1) * state.I / ((n + 1) * state.J)


def normalize(v: MaxAffineFunction, k: int, target: str = "equation") -> tuple[MaxAffineFunction, float]:
    """Project onto C_{n+2} and rescale.

    ``target="equation"`` makes the right-hand side constant equal to 1;
    ``target="energy"`` picks the scale minimizing E (then J^(-1/(n+1)) = n+k+1).
    """
    v = project_to_Cn2(_admissible_shift(v))
    st = EnergyState(v, k)
    n = v.dimension
    if target == "equation":
        s = equation_constant(st) ** (-1.0 / (2 * n + k + 2))
    elif target == "energy":
        s = (n + k + 1) * st.J ** (1.0 / (n + 1))
    else:
        raise ValueError(target)
    return v.scaled(s), s


def reduced_energy_offset(n: int, k: int) -> float:
    return (n + k + 1) * (1.0 - np.log(n + k + 1))


class _Objective:
    """G and its gradient in (b) or (a, b), with evaluation bookkeeping."""

    def __init__(self, slopes, domain, k, joint=False):
        self.slopes = np.asarray(slopes, dtype=float)
        self.domain = domain
        self.k = k
        self.joint = joint
        self.m, self.n = self.slopes.shape
        self.c = (self.n + k + 1) / (self.n + 1)
        self.evaluations = 0
        self.best = (np.inf, None)

    def unpack(self, p):
        if self.joint:
            return p[:self.m * self.n].reshape(self.m, self.n), p[self.m * self.n:]
        return self.slopes, p

    def __call__(self, p):
        self.evaluations += 1
        a, b = self.unpack(p)
        try:
            v = _admissible_shift(MaxAffineFunction(a, b, self.domain))
            v = shifted_like(v, optimal_shift(v))
            st = EnergyState(v, self.k)
            val = -np.log(st.I) - self.c * np.log(st.J)
            gb = -st.grad_I() / st.I - self.c * st.grad_J() / st.J
            if self.joint:
                ga = -st.grad_I_slopes() / st.I - self.c * st.grad_J_slopes() / st.J
                grad = np.r_[ga.ravel(), gb]
            else:
                grad = gb
        except (AdmissibilityError, ConvergenceError, np.linalg.LinAlgError) as exc:
            log.debug("rejected trial point: %s", exc)
            return np.inf, np.zeros_like(p)
        if not np.isfinite(val):
            return np.inf, np.zeros_like(p)
        if val < self.best[0]:
            self.best = (float(val), p.copy())
        return float(val), grad


def _run_lbfgs(obj: _Objective, p0, max_iter, gtol):
    trace = []
    res = minimize(obj, p0, jac=True, method="L-BFGS-B",
                   callback=lambda xk: trace.append(obj.best[0]),
                   options=dict(maxiter=max_iter, maxfun=4 * max_iter, ftol=1e-15,
                                gtol=gtol, maxcor=30))
    best_val, best_p = obj.best
    if best_p is None:
        raise ConvergenceError("no admissible point was evaluated", {"message": res.message})
    return best_p, best_val, res, trace


def revive_pieces(slopes, intercepts, domain, lift=1e-5):
    """Intercepts with every empty cell raised just above tangency, or None.

    A piece whose cell is empty has zero gradient, so a descent method never
    brings it back; placing it ``lift`` (relative to the range of ``v``)
    above its supporting value lets the next run decide its size.
    """
    v = MaxAffineFunction(slopes, intercepts, domain)
    cx = v.complex
    dead = ~cx.active
    if not dead.any():
        return None
    tangency = np.max(slopes[dead] @ cx.vertices.T - cx.values[None, :], axis=1)
    b = np.array(intercepts, dtype=float)
    b[dead] = -tangency + lift * (cx.values.max() - cx.values.min() + 1e-12)
    return b


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def initialize(config: SolverConfig) -> MaxAffineFunction:
    """``1`` plus 2(n+1) supporting planes of a flat paraboloid, projected onto C_{n+2}."""
    P = config.polytope
    n = P.dimension
    eps = 0.1
    r = 0.5 * P.inradius()
    dirs = np.vstack([np.eye(n), -np.eye(n), np.ones((1, n)) / np.sqrt(n), -np.ones((1, n)) / np.sqrt(n)])
    pts = r * dirs
    slopes = np.vstack([np.zeros((1, n)), eps * pts])
    intercepts = np.r_[1.0, 1.0 - 0.5 * eps * np.sum(pts ** 2, axis=1)]
    v0 = MaxAffineFunction(slopes, intercepts, P)
    return project_to_Cn2(v0)


def boundary_vstar(v: MaxAffineFunction) -> float:
    """max over pieces touching the boundary of P of |v*| = |b_i|."""
    cx = v.complex
    on_bd = cx.facet_incidence.any(axis=1)
    pieces = np.nonzero(cx.piece_incidence[on_bd].any(axis=0) & cx.active)[0]
    return float(np.max(np.abs(v.intercepts[pieces]))) if len(pieces) else 0.0


def _energy_of(v, k) -> float:
    st = EnergyState(v, k)
    n = v.dimension
    return float(-np.log(st.I) - (n + k + 1) / (n + 1) * np.log(st.J)) + reduced_energy_offset(n, k)


def minimize_energy(config: SolverConfig, progress=None):
    """Minimize E over C_{n+2}(P); returns ``(v, u, report)``.

    ``v`` is normalized to solve the equation with constant 1; the energy
    record refers to the E-minimizing scale of the same shape.
    """
    t_start = time.perf_counter()
    k, n = int(config.k), config.dimension
    P = config.polytope
    history: list[float] = []
    stages: list[dict] = []
    removal_log: list[dict] = []
    flag = BUDGET_EXHAUSTED
    message = ""

    def record(val):
        if not history or val <= history[-1]:
            history.append(float(val))

    v = initialize(config)
    record(_energy_of(v, k))
    schedule = list(config.refinement_schedule)
    final_m = schedule[-1]
    plan = schedule + [final_m] * (config.max_outer_iterations - 1)
    prev_final = None
    stage_ends: list[float] = []
    last_success = False
    try:
        for stage, m in enumerate(plan):
            u = legendre_transform(v)
            if n == 2 and config.boundary_depth > 0 and v.n_pieces >= 32:
                w = graded_slopes(v, u, m, config.boundary_depth * P.inradius())
            else:
                w = slope_lattice(u.negativity_region, m, seed=config.random_seed + stage)
            b0 = -u(w)
            obj = _Objective(w, P, k)
            p, val, res, trace = _run_lbfgs(obj, b0, config.max_inner_iterations,
                                            config.gradient_tolerance)
            for _ in range(config.revive_cycles):
                b1 = revive_pieces(w, p, P)
                if b1 is None:
                    break
                p, val, res, more = _run_lbfgs(obj, b1, config.max_inner_iterations,
                                               config.gradient_tolerance)
                trace += more
            off = reduced_energy_offset(n, k)
            candidate = MaxAffineFunction(w, p, P).pruned()
            cand_E = val + off
            accepted = not history or cand_E <= history[-1] + 1e-12 * abs(history[-1])
            if accepted:
                for tv in trace:
                    record(tv + off)
                record(cand_E)
                v, _ = normalize(candidate, k, target="energy")
                # Monge-Ampere mass outside Omega is moved onto its boundary; E may only drop.
                vr = mass_removal(v)
                e_before, e_after = _energy_of(v, k), _energy_of(vr, k)
                removal_log.append({"stage": stage, "E_before": e_before, "E_after": e_after})
                if e_after <= e_before:
                    v = vr
                    record(e_after)
            last_success = bool(res.success)
            stages.append({"stage": stage, "pieces": int(len(w)), "active": int(candidate.n_pieces),
                           "iterations": int(res.nit), "evaluations": obj.evaluations,
                           "energy": cand_E, "accepted": bool(accepted),
                           "message": str(res.message)})
            if progress:
                progress(stages[-1])
            stage_ends.append(history[-1])
            if stage >= len(schedule) - 1:
                if prev_final is not None and abs(prev_final - history[-1]) <= config.energy_tolerance * abs(prev_final):
                    flag = CONVERGED
                    break
                prev_final = history[-1]
        if config.polish:
            vp = v.pruned()
            obj = _Objective(vp.slopes, P, k, joint=True)
            p, val, res, trace = _run_lbfgs(obj, np.r_[vp.slopes.ravel(), vp.intercepts],
                                            config.polish_iterations, config.gradient_tolerance)
            a, b = obj.unpack(p)
            cand_E = val + reduced_energy_offset(n, k)
            accepted = cand_E <= history[-1]
            if accepted:
                for tv in trace:
                    record(tv + reduced_energy_offset(n, k))
                record(cand_E)
                v = MaxAffineFunction(a, b, P).pruned()
            last_success = bool(res.success)
            stages.append({"stage": "polish", "pieces": int(vp.n_pieces), "iterations": int(res.nit),
                           "evaluations": obj.evaluations, "energy": cand_E, "accepted": bool(accepted),
                           "message": str(res.message)})
            if progress:
                progress(stages[-1])
        # otherwise judge by the decrement over the last full stage
        if flag != CONVERGED and last_success and len(stage_ends) > 1:
            dec = (stage_ends[-2] - history[-1]) / abs(stage_ends[-2])
            if dec < config.energy_tolerance:
                flag = CONVERGED
    except (ConvergenceError, AdmissibilityError) as exc:
        flag = ERROR
        message = str(exc)
        log.warning("solver stopped: %s", exc)

    v_energy, s_energy = normalize(v, k, target="energy")
    st = EnergyState(v_energy, k)
    final = st.record()
    v_out, s_eq = normalize(v, k, target="equation")
    v_out = v_out.pruned()
    u_out = legendre_transform(v_out)
    report = SolveReport(
        energy_history=history,
        final_record=final,
        barycenter_residual=barycenter_residual(v_out),
        vstar_boundary_max=boundary_vstar(v_out),
        convergence_flag=flag,
        equation_scale=float(s_eq / s_energy),
        stages=stages,
        inequality_results=inequality_suite(v_out),
        mass_removal_log=removal_log,
        runtime_seconds=time.perf_counter() - t_start,
        message=message,
    )
    return v_out, u_out, report
