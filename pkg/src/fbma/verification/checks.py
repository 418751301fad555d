"""Post-hoc checks of a solved pair ``(v, u)``.

Every check returns a small dataclass with a ``to_json`` method and a
``passed`` flag where a pass/fail criterion makes sense.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import qmc

from ..convex import DualFunction, MaxAffineFunction, cell_complex
from ..errors import DomainError, InvalidPolytopeError
from ..geometry import Polytope, volume
from ..quadrature import _reference_rule, simplex_volumes
from .mollify import Mollified


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if not f.name.startswith("_")}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


class _Report:
    def to_json(self) -> dict:
        return _jsonable(self)


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

def middle_samples(region: Polytope, count: int, fraction: float = 0.8, seed: int = 0,
                   center=None) -> np.ndarray:
    """Points of ``center + fraction * (region - center)`` (grid in 1D, Sobol otherwise)."""
    n = region.dimension
    c = np.zeros(n) if center is None else np.asarray(center, float)
    inner = region.scaled(fraction, center=c)
    lo, hi = inner.vertices.min(axis=0), inner.vertices.max(axis=0)
    if n == 1:
        return np.linspace(lo[0], hi[0], count)[:, None]
    sob = qmc.Sobol(n, scramble=True, seed=seed)
    out = np.zeros((0, n))
    while len(out) < count:
        pts = lo + (hi - lo) * sob.random(2 ** int(np.ceil(np.log2(4 * count))))
        out = np.vstack([out, pts[inner.contains(pts)]])
    return out[:count]


def default_width(v: MaxAffineFunction, factor: float = 0.6) -> float:
    """Mollifier width ``factor * sqrt(delta * r)`` for cell size ``delta`` and inradius ``r``.

    Smoothing bias grows like ``h^2`` while the error from cell positions
    grows like ``delta^2 / h^2``; the square-root rule balances the two.
    """
    n = v.dimension
    m = max(int(np.count_nonzero(v.complex.active)), 1)
    delta = (volume(v.domain) / m) ** (1.0 / n)
    return factor * np.sqrt(delta * v.domain.inradius())


def evaluate_max_affine(slopes, intercepts, x, chunk: int = 200_000) -> tuple[np.ndarray, np.ndarray]:
    """Values and active indices of ``max_i <c_i, x> + d_i`` for many points."""
    c = np.atleast_2d(np.asarray(slopes, float))
    d = np.asarray(intercepts, float).ravel()
    x = np.atleast_2d(np.asarray(x, float))
    if c.shape[1] == 1 and len(x) > 1000:
        lo, hi = x.min() - 1.0, x.max() + 1.0
        cx = cell_complex(c, d, Polytope.box([lo], [hi]))
        left = cx.simplices[:, :, 0].min(axis=1)
        order = np.argsort(left)
        owner = cx.owner[order]
        idx = owner[np.clip(np.searchsorted(left[order], x[:, 0], side="right") - 1, 0, len(owner) - 1)]
        return c[idx, 0] * x[:, 0] + d[idx], idx
    vals = np.empty(len(x))
    idx = np.empty(len(x), dtype=int)
    for s in range(0, len(x), chunk):
        lin = x[s:s + chunk] @ c.T + d
        idx[s:s + chunk] = np.argmax(lin, axis=1)
        vals[s:s + chunk] = lin[np.arange(len(lin)), idx[s:s + chunk]]
    return vals, idx


def _rejection(sample_box, density, bound, N, rng, batch=400_000):
    lo, hi = sample_box
    out = []
    got = 0
    while got < N:
        pts = lo + (hi - lo) * rng.random((batch, len(lo)))
        dens = density(pts)
        keep = rng.random(batch) * bound < dens
        out.append(pts[keep])
        got += int(keep.sum())
    return np.vstack(out)[:N]


def sample_mu(u: DualFunction, k: int, N: int, rng) -> np.ndarray:
    """Draws from the probability measure proportional to ``(-u)_+^k`` on Omega."""
    omega = u.negativity_region
    if omega.is_degenerate or volume(omega) <= 0:
        raise InvalidPolytopeError("degenerate negativity region")
    box = (omega.vertices.min(axis=0), omega.vertices.max(axis=0))

    def dens(x):
        return np.maximum(-evaluate_max_affine(u.slopes, u.intercepts, x)[0], 0.0) ** k

    return _rejection(box, dens, (-u.min_value) ** k, N, rng)


def sample_nu(v: MaxAffineFunction, N: int, rng) -> np.ndarray:
    """Draws from the probability measure proportional to ``v^-(n+2)`` on P."""
    P = v.domain
    n = v.dimension
    box = (P.vertices.min(axis=0), P.vertices.max(axis=0))

    def dens(y):
        val = evaluate_max_affine(v.slopes, v.intercepts, y)[0]
        return np.where(P.contains(y), val ** -(n + 2.0), 0.0)

    return _rejection(box, dens, v.min_value() ** -(n + 2.0), N, rng)


def nu_moments(v: MaxAffineFunction, degree: int = 14):
    """Mass, mean and second moment matrix of ``v^-(n+2) dy`` (unnormalized mass)."""
    n = v.dimension
    cx = v.complex
    ref, w = _reference_rule(n, degree)
    S = cx.simplices
    vol = simplex_volumes(S)
    E = S[:, 1:] - S[:, :1]
    pts = S[:, :1] + np.einsum("qd,tde->tqe", ref, E)
    lam = np.column_stack([1 - ref.sum(axis=1), ref])
    vals = np.einsum("qj,tj->tq", lam, cx.simplex_values)
    wt = (w * math.factorial(n))[None, :] * vol[:, None] * vals ** -(n + 2.0)
    mass = wt.sum()
    mean = np.einsum("tq,tqd->d", wt, pts) / mass
    second = np.einsum("tq,tqd,tqe->de", wt, pts, pts) / mass
    return float(mass), mean, second


# ---------------------------------------------------------------------------
# Monge-Ampere residual
# ---------------------------------------------------------------------------

@dataclass
class ResidualSummary(_Report):
    sample_count: int
    max_relative_residual: float
    mean_relative_residual: float
    interior_margin: float
    smoothing_width: float
    excluded_count: int = 0
    fraction: float = 0.8


def ma_residual(v: MaxAffineFunction, k: int, n: int | None = None, samples: int = 200,
                fraction: float = 0.8, h: float | None = None, seed: int = 0,
                constant: float = 1.0) -> ResidualSummary:
    """``max |det D^2 v_h * v_h^(n+2) * (-v_h*)^k / constant - 1|`` over middle samples.

    ``v_h`` is the mollification of ``v`` at width ``h``; samples where
    ``-v_h* <= 0`` are excluded and counted.
    """
    v.require_admissible()
    n = v.dimension if n is None else n
    if n != v.dimension:
        raise ValueError("dimension mismatch")
    P = v.domain
    h = default_width(v) if h is None else float(h)
    # keep the kernel support inside P
    gap = (1.0 - fraction) * float(np.min(P.offsets))
    h = min(h, 0.95 * gap)
    ys = middle_samples(P, samples, fraction, seed)
    mol = Mollified(v.slopes, v.intercepts, h)
    val, grad, hess = mol.value_gradient_hessian(ys)
    minus_vstar = val - np.sum(ys * grad, axis=1)
    ok = minus_vstar > 0
    lhs = np.linalg.det(hess[ok]) * val[ok] ** (n + 2) * minus_vstar[ok] ** k / constant
    res = np.abs(lhs - 1.0)
    margin = float(np.min(P.distance_to_boundary(ys)) / P.inradius())
    return ResidualSummary(int(ok.sum()), float(res.max()) if len(res) else np.nan,
                           float(res.mean()) if len(res) else np.nan, margin, h,
                           int((~ok).sum()), fraction)


# ---------------------------------------------------------------------------
# optimal transport characterization
# ---------------------------------------------------------------------------

@dataclass
class PushforwardReport(_Report):
    sample_count: int
    tolerance: float
    moment_names: list
    pushforward_moments: list
    nu_moments: list
    moment_errors: list
    moment_tolerances: list
    nu_barycenter: list
    gaps: list = field(default_factory=list)
    gap_tolerances: list = field(default_factory=list)
    moments_passed: bool = False
    gaps_passed: bool = False

    @property
    def passed(self) -> bool:
        return self.moments_passed and self.gaps_passed


def random_convex_perturbation(v: MaxAffineFunction, rng, pieces: int = 4,
                               eps: float = 0.05) -> MaxAffineFunction:
    """``v + eps * delta`` for a random max-affine ``delta`` (convex, so the sum stays convex)."""
    n = v.dimension
    da = rng.normal(size=(pieces, n))
    db = 0.3 * rng.normal(size=pieces)
    a = (v.slopes[:, None, :] + eps * da[None]).reshape(-1, n)
    b = (v.intercepts[:, None] + eps * db[None]).ravel()
    return MaxAffineFunction(a, b, v.domain).pruned()


def _dual_pieces(v: MaxAffineFunction):
    """Max-affine data of the Legendre transform of ``v`` restricted to P (any sign of v)."""
    cx = v.complex
    return cx.vertices, -cx.values


def pushforward_check(u: DualFunction, v: MaxAffineFunction, k: int, N: int = 1_000_000,
                      perturbations: int = 50, eps: float = 0.05, seed: int = 0) -> PushforwardReport:
    """Compare ``(grad u)_# mu`` with ``nu`` and test the transport duality inequality.

    Moments: mean and second moments of the pushed samples against ``nu``'s
    moments computed by quadrature.  Duality: for ``v_hat = v + eps * delta``
    with fixed ``mu``, ``nu`` the gap
    ``int (v_hat - v) dnu + int (u_hat - u) dmu`` must be nonnegative; Monte
    Carlo estimates use common samples and a three-standard-error tolerance.
    """
    rng = np.random.default_rng(seed)
    n = v.dimension
    X = sample_mu(u, k, N, rng)
    _, idx = evaluate_max_affine(u.slopes, u.intercepts, X)
    Y = u.slopes[idx]
    _, mean, second = nu_moments(v)
    names, push, ref, tols = [], [], [], []
    for i in range(n):
        names.append(f"y{i}")
        push.append(Y[:, i].mean())
        ref.append(mean[i])
        tols.append(3.0 * max(Y[:, i].std(), 1.0) / np.sqrt(N))
    for i in range(n):
        for j in range(i, n):
            prod = Y[:, i] * Y[:, j]
            names.append(f"y{i}y{j}")
            push.append(prod.mean())
            ref.append(second[i, j])
            tols.append(3.0 * max(prod.std(), 1.0) / np.sqrt(N))
    errs = np.abs(np.array(push) - np.array(ref))
    report = PushforwardReport(N, 3.0 / np.sqrt(N), names, push, ref, errs.tolist(), tols,
                               mean.tolist())
    report.moments_passed = bool(np.all(errs <= np.array(tols)))

    Yn = sample_nu(v, N, rng)
    v_base = evaluate_max_affine(v.slopes, v.intercepts, Yn)[0]
    u_base = evaluate_max_affine(u.slopes, u.intercepts, X)[0]
    gaps, gtols = [], []
    for _ in range(perturbations):
        vh = random_convex_perturbation(v, rng, eps=eps)
        zs, ds = _dual_pieces(vh)
        dv = evaluate_max_affine(vh.slopes, vh.intercepts, Yn)[0] - v_base
        du = evaluate_max_affine(zs, ds, X)[0] - u_base
        gaps.append(float(dv.mean() + du.mean()))
        se = np.sqrt(dv.var() / N + du.var() / N)
        gtols.append(float(max(3.0 * se, 3.0 / np.sqrt(N) * eps)))
    report.gaps = gaps
    report.gap_tolerances = gtols
    report.gaps_passed = bool(np.all(np.array(gaps) >= -np.array(gtols)))
    return report


# ---------------------------------------------------------------------------
# Klartag's moment-measure form
# ---------------------------------------------------------------------------

@dataclass
class KlartagReport(_Report):
    sample_count: int
    excluded_count: int
    mean_constant: float
    relative_spread: float
    smoothing_width: float
    scaling_lambda: float | None = None
    scaling_ratio: float | None = None
    scaling_expected: float | None = None

    @property
    def passed(self) -> bool:
        return self.relative_spread <= 0.10


def _klartag_values(slopes, intercepts, xs, k, h):
    n = xs.shape[1]
    mol = Mollified(slopes, intercepts, h)
    val, p, H = mol.value_gradient_hessian(xs)
    s = -val
    ok = s > 0
    s, p, H, x = s[ok], p[ok], H[ok], xs[ok]
    ustar = np.sum(x * p, axis=1) + s
    eye = np.eye(n)[None]
    A = eye - np.einsum("ti,tj->tij", p, x) / ustar[:, None, None]
    D2 = (s / ustar)[:, None, None] * np.einsum("tij,tjk,tlk->til", A, H, A)
    phi = 1.0 / s
    return np.linalg.det(D2) * phi ** (n + 2 + k), int((~ok).sum())


def klartag_transform_check(u: DualFunction, k: int, samples: int = 200, fraction: float = 0.8,
                            h: float | None = None, seed: int = 0,
                            scaling_lambda: float | None = 1.25) -> KlartagReport:
    """Spread of ``det D^2 phi * phi^(n+2+k)`` where ``phi(x/(-u)) = 1/(-u)``.

    With ``s = -u``, ``p = grad u`` and ``u* = <x, p> - u`` the chain rule gives
    ``grad phi = p / u*`` and
    ``D^2 phi = (s/u*) (I - p x^T/u*) D^2 u (I - x p^T/u*)``.
    Optionally repeats the computation for ``u(lambda x)`` and reports the
    ratio of constants, which must be ``lambda^(2n)``.
    """
    omega = u.negativity_region
    n = u.dimension
    if h is None:
        delta = (volume(omega) / max(len(u.slopes), 1)) ** (1.0 / n)
        h = 0.6 * np.sqrt(delta * omega.inradius())
    h = min(h, 0.95 * (1.0 - fraction) * float(np.min(omega.offsets)))
    xs = middle_samples(omega, samples, fraction, seed)
    vals, excl = _klartag_values(u.slopes, u.intercepts, xs, k, h)
    mean = float(np.mean(vals))
    spread = float((vals.max() - vals.min()) / abs(mean))
    rep = KlartagReport(len(vals), excl, mean, spread, h)
    if scaling_lambda is not None:
        lam = float(scaling_lambda)
        vals_l, _ = _klartag_values(lam * u.slopes, u.intercepts, xs / lam, k, h / lam)
        rep.scaling_lambda = lam
        rep.scaling_ratio = float(np.mean(vals_l) / mean)
        rep.scaling_expected = lam ** (2 * n)
    return rep


# ---------------------------------------------------------------------------
# homogenized ansatz
# ---------------------------------------------------------------------------

def ansatz_constant(n: int, k: int) -> Fraction:
    """``((n+1)/(n+k+1)) * ((2n+k+2)/(n+k+1))^(n+k+1)`` in exact arithmetic."""
    return Fraction(n + 1, n + k + 1) * Fraction(2 * n + k + 2, n + k + 1) ** (n + k + 1)


def ansatz_constant_chain(n: int, k: int) -> Fraction:
    """Same constant as ``(m-1) m^(n+k+1)`` with ``m = (2n+k+2)/(n+k+1)``."""
    m = 1 + Fraction(n + 1, n + k + 1)
    return (m - 1) * m ** (n + k + 1)


@dataclass
class AnsatzReport(_Report):
    target: float
    sample_count: int
    excluded_count: int
    max_relative_deviation: float
    mean_value: float
    smoothing_width: float
    degree: float
    degree_check_error: float
    boundary_ratios: list

    @property
    def passed(self) -> bool:
        return self.max_relative_deviation <= 0.05


def _ansatz_values(mol: Mollified, y, lam, m, k):
    n = y.shape[1]
    val, grad, H = mol.value_gradient_hessian(y)
    g = lam * val
    dg = np.column_stack([grad, val - np.sum(y * grad, axis=1)])
    B = np.concatenate([np.broadcast_to(np.eye(n), (len(y), n, n)), -y[:, None, :]], axis=1)
    D2g = np.einsum("tia,tab,tjb->tij", B, H, B) / lam[:, None, None]
    D2phi = (m * g ** (m - 1))[:, None, None] * D2g \
        + (m * (m - 1) * g ** (m - 2))[:, None, None] * np.einsum("ti,tj->tij", dg, dg)
    dphi_dlam = m * g ** (m - 1) * dg[:, -1]
    return dphi_dlam, np.linalg.det(D2phi)


def ansatz_residual(v: MaxAffineFunction, k: int, samples: int = 200, fraction: float = 0.8,
                    h: float | None = None, seed: int = 0, lam_range=(0.5, 2.0)) -> AnsatzReport:
    """Relative deviation of ``(d phi/d lambda)^k det D^2 phi`` from the exact constant.

    ``phi(lambda y, lambda) = (lambda v_h(y))^m`` with ``m = 1 + (n+1)/(n+k+1)``
    and ``v_h`` the mollified ``v``; derivatives follow from the chain rule.
    """
    from ..convex import ansatz_degree, homogenize
    n = v.dimension
    m = ansatz_degree(n, k)
    target = float(ansatz_constant(n, k))
    P = v.domain
    h = default_width(v) if h is None else float(h)
    h = min(h, 0.95 * (1.0 - fraction) * float(np.min(P.offsets)))
    rng = np.random.default_rng(seed)
    y = middle_samples(P, samples, fraction, seed)
    lam = rng.uniform(*lam_range, size=len(y))
    mol = Mollified(v.slopes, v.intercepts, h)
    dl, det = _ansatz_values(mol, y, lam, m, k)
    ok = dl > 0
    val = dl[ok] ** k * det[ok]
    dev = np.abs(val / target - 1.0)
    # degree check on the exact (unmollified) homogenization
    phi = homogenize(v, m)
    pts = np.column_stack([lam[:, None] * y, lam])
    t = 1.7
    deg_err = float(np.max(np.abs(phi(t * pts) / (t ** m * phi(pts)) - 1.0)))
    # d phi/d lambda along rays from the center of P toward its vertices, relative to the center
    ratios = []
    for vert in P.vertices:
        ts = np.array([0.0, 0.5, 0.9, 0.99, 1.0])
        ray = ts[:, None] * vert[None]
        g = v(ray)
        gv = v.gradient(ray)
        dlam = m * g ** (m - 1) * (g - np.sum(ray * gv, axis=1))
        ratios.append((dlam / dlam[0]).tolist())
    return AnsatzReport(target, int(ok.sum()), int((~ok).sum()), float(dev.max()),
                        float(val.mean()), h, m, deg_err, ratios)


# ---------------------------------------------------------------------------
# boundary exponent
# ---------------------------------------------------------------------------

@dataclass
class ExponentFit(_Report):
    face_id: int
    fitted_exponent: float
    coefficient: float
    tangential_hessian: np.ndarray
    fit_residual: float
    expected_exponent: float | None = None
    anchor: np.ndarray | None = None
    window: tuple = ()

    @property
    def hessian_positive_definite(self) -> bool:
        H = np.atleast_2d(self.tangential_hessian)
        return H.size == 0 or bool(np.all(np.linalg.eigvalsh(H) > 0))

    @property
    def relative_error(self) -> float | None:
        if self.expected_exponent is None:
            return None
        return abs(self.fitted_exponent / self.expected_exponent - 1.0)


def _ray_cells(v: MaxAffineFunction, anchor, direction, t_max, resolution=20001):
    """Midpoints (in t) and pieces of the cells of ``v`` crossed by a ray."""
    t = np.linspace(0.0, t_max, resolution)
    idx = v.active_piece(anchor[None, :] + t[:, None] * direction[None, :])
    ch = np.nonzero(np.diff(idx))[0]
    edges = np.r_[0.0, 0.5 * (t[ch] + t[ch + 1]), t_max]
    return 0.5 * (edges[1:] + edges[:-1]), idx[np.r_[0, ch + 1]]


def fit_boundary_exponent(v, face: int, window=(0.0, 0.3), k: int | None = None,
                          domain: Polytope | None = None, points: int = 200,
                          band: float = 1.5) -> ExponentFit:
    """Exponent of the sublinear term of ``v`` at the centroid of a facet.

    If ``v = v(x_bar) + <grad v(x_bar), x - x_bar> + p t^gamma + ...`` with
    ``t`` the distance to the facet, then ``-v* = R - <x, grad R>`` for the
    remainder ``R``; since ``v*`` vanishes on the facet the affine part drops
    out and ``-v*(x_bar + t n) = d gamma p t^(gamma-1) (1 + O(t))`` with ``d``
    the facet's distance from the origin.  We fit
    ``log(-v*) = log(d gamma p) + (gamma - 1) log t + q t`` by least squares,
    dropping the nearest 10% of the window.  For a max-affine ``v`` the data
    are its cells (``-v* = b_i`` on cell ``i``): in 1D those crossed by the
    normal ray, at their midpoints; for n >= 2 every cell whose centroid lies
    in the window and within ``band * t_max`` of the anchor along the facet,
    at its centroid.  A single ray meets too few cells of a 2D complex for a
    stable fit.  Any other ``v`` must provide ``vstar``.
    """
    P = v.domain if domain is None else domain
    n = P.dimension
    if face < 0 or face >= len(P.normals):
        raise ValueError(f"face {face} out of range")
    nrm, off = P.normals[face], P.offsets[face]
    on_face = np.abs(P.vertices @ nrm - off) <= 1e-9 * max(1.0, P.diameter)
    anchor = P.vertices[on_face].mean(axis=0)
    inward = -nrm
    t_min, t_max = map(float, window)
    if not 0 <= t_min < t_max:
        raise ValueError("window must satisfy 0 <= t_min < t_max")
    others = [i for i in range(len(P.normals)) if i != face]
    if n == 1:
        strata = float(np.min(P.offsets[others] - P.normals[others] @ anchor))
    else:
        # in-facet distance from the anchor to the lower-dimensional faces
        strata = np.inf
        for i in others:
            dist = P.offsets[i] - P.normals[i] @ anchor
            sin = np.sqrt(max(1.0 - float(P.normals[i] @ nrm) ** 2, 1e-300))
            strata = min(strata, dist / sin)
    if t_max > strata / 3.0:
        raise DomainError("fit window reaches toward the lower-dimensional faces "
                          f"(t_max={t_max:.3g} > {strata / 3.0:.3g})")
    if isinstance(v, MaxAffineFunction) and n >= 2:
        if band * t_max > strata / 2.0:
            raise DomainError("tangential band reaches toward the lower-dimensional faces")
        cen = v.complex.cell_centroids()
        ok = np.all(np.isfinite(cen), axis=1)
        ts = off - cen[ok] @ nrm
        rel = cen[ok] - anchor
        tang = np.linalg.norm(rel - np.outer(rel @ nrm, nrm), axis=1)
        sel = (ts <= t_max) & (tang <= band * t_max)
        ts, w = ts[sel], v.intercepts[ok][sel]
    elif isinstance(v, MaxAffineFunction):
        # trace past t_max so the last cell in the window keeps its true midpoint
        ts, pieces = _ray_cells(v, anchor, inward, min(1.5 * t_max, 0.999 * strata))
        w = v.intercepts[pieces]
        w = w[ts <= t_max]
        ts = ts[ts <= t_max]
    else:
        ts = np.linspace(t_min, t_max, points + 1)[1:]
        w = -np.asarray(v.vstar(anchor[None, :] + ts[:, None] * inward[None, :]), float).ravel()
    keep = (ts >= t_min + 0.1 * (t_max - t_min)) & (w > 0)
    ts, w = ts[keep], w[keep]
    if len(ts) < 4:
        raise DomainError("too few cells inside the fit window")
    A = np.column_stack([np.ones_like(ts), np.log(ts), ts])
    coef, *_ = np.linalg.lstsq(A, np.log(w), rcond=None)
    gamma = 1.0 + coef[1]
    p = np.exp(coef[0]) / (off * gamma)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(w)) ** 2)))
    if n == 1:
        Ht = np.zeros((0, 0))
    else:
        basis = np.linalg.svd(np.eye(n) - np.outer(nrm, nrm))[0][:, :n - 1]
        tau = strata / 6.0
        Ht = np.empty((n - 1, n - 1))
        for i in range(n - 1):
            for j in range(n - 1):
                ei, ej = basis[:, i] * tau, basis[:, j] * tau
                pts = anchor + np.array([ei + ej, ei - ej, -ei + ej, -ei - ej])
                fv = np.asarray(v(pts), float).ravel()
                Ht[i, j] = (fv[0] - fv[1] - fv[2] + fv[3]) / (4 * tau * tau)
        Ht = 0.5 * (Ht + Ht.T)
    expected = None if k is None else 1.0 + 1.0 / (k + 1.0)
    return ExponentFit(face, float(gamma), float(p), Ht, resid, expected, anchor, (t_min, t_max))


# ---------------------------------------------------------------------------
# strict convexity of the free boundary
# ---------------------------------------------------------------------------

@dataclass
class ConvexityReport(_Report):
    resolution: int
    diameter: float
    min_defect: float
    longest_flat_run: float
    flat_threshold: float
    run_limit: float
    convex: bool
    strictly_convex: bool
    boundary: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return self.convex and self.strictly_convex


def trace_level_set(slopes, intercepts, center, resolution: int) -> np.ndarray:
    """Boundary of ``{max_j <c_j,x> + d_j <= 0}`` on rays from ``center`` (2D)."""
    c = np.asarray(slopes, float)
    d = np.asarray(intercepts, float)
    c0 = np.asarray(center, float)
    base = c @ c0 + d
    if np.any(base >= 0):
        raise DomainError("center is not inside the sublevel set")
    th = 2 * np.pi * np.arange(resolution) / resolution
    dirs = np.column_stack([np.cos(th), np.sin(th)])
    rate = dirs @ c.T
    with np.errstate(divide="ignore"):
        # rates at rounding level (rays parallel to a face) never reach it
        hit = rate > 1e-12 * np.linalg.norm(c, axis=1)[None, :]
        r = np.where(hit, -base[None, :] / np.where(hit, rate, 1.0), np.inf).min(axis=1)
    if not np.all(np.isfinite(r)):
        raise DomainError("level set is unbounded along some ray")
    return c0 + r[:, None] * dirs


def free_boundary_convexity_check(u, resolution: int = 720, flat_rel: float = 1e-6,
                                  run_rel: float = 0.1, center=None,
                                  keep_boundary: bool = False) -> ConvexityReport:
    """Convexity defects of the traced free boundary ``{u = 0}`` (n = 2).

    ``u`` is a :class:`DualFunction` or a ``(slopes, intercepts)`` pair.
    A point's defect is its outward distance from the chord through its two
    neighbours.  Runs of defects below ``flat_rel * diam`` longer than
    ``run_rel * diam`` are reported as flat pieces.
    """
    if isinstance(u, DualFunction):
        slopes, intercepts = u.slopes, u.intercepts
        if center is None:
            center = np.zeros(u.dimension) if u.value_at_origin < 0 else u.min_point
    else:
        slopes, intercepts = map(np.asarray, u)
    slopes = np.atleast_2d(slopes)
    if slopes.shape[1] != 2:
        raise ValueError("free boundary tracing is implemented for n = 2")
    if center is None:
        center = np.zeros(2)
    pts = trace_level_set(slopes, intercepts, center, resolution)
    diam = float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2)))
    prev, nxt = np.roll(pts, 1, axis=0), np.roll(pts, -1, axis=0)
    chord = nxt - prev
    rel = pts - prev
    cross = chord[:, 0] * rel[:, 1] - chord[:, 1] * rel[:, 0]
    defect = -cross / np.linalg.norm(chord, axis=1)
    eps = flat_rel * diam
    flat = defect < eps
    longest = 0.0
    if np.all(flat):
        longest = np.inf
    elif np.any(flat):
        start = int(np.argmin(flat))  # a non-flat index
        order = np.roll(np.arange(resolution), -start)
        i = 0
        while i < resolution:
            if flat[order[i]]:
                j = i
                while j < resolution and flat[order[j]]:
                    j += 1
                a, b = order[i - 1], order[j % resolution]
                longest = max(longest, float(np.linalg.norm(pts[b] - pts[a])))
                i = j
            else:
                i += 1
    return ConvexityReport(resolution, diam, float(defect.min()), longest, eps, run_rel * diam,
                           bool(defect.min() >= -1e-9 * max(diam, 1.0)),
                           bool(longest <= run_rel * diam),
                           pts if keep_boundary else None)
