"""The full set of post-hoc checks for a solved ``v``, with pass/fail verdicts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..convex import MaxAffineFunction, legendre_transform
from ..errors import DomainError
from ..functionals import barycenter_residual, inequality_suite
from .checks import (_jsonable, ansatz_residual, fit_boundary_exponent,
                     free_boundary_convexity_check, klartag_transform_check, ma_residual,
                     pushforward_check)


@dataclass
class VerificationOptions:
    samples: int = 200
    mc_samples: int = 100_000
    perturbations: int = 50
    seed: int = 0
    exponent_window: tuple | None = None
    exponent_tolerance: float = 0.05
    residual_tolerance: float = 0.05
    klartag_spread: float = 0.10
    ansatz_tolerance: float = 0.05
    convexity_resolution: int = 720
    skip: list = field(default_factory=list)

    @classmethod
    def from_json(cls, data: dict | None) -> "VerificationOptions":
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown verification keys: {sorted(unknown)}")
        if data.get("exponent_window") is not None:
            data["exponent_window"] = tuple(data["exponent_window"])
        return cls(**data)


def _is_simplex(P) -> bool:
    return len(P.vertices) == P.dimension + 1


def default_exponent_window(v: MaxAffineFunction) -> tuple:
    """Distances from the facet used by the exponent fit: up to 0.4 of the inradius."""
    return (0.0, 0.4 * v.domain.inradius())


def run_battery(v: MaxAffineFunction, k: int, opts: VerificationOptions | None = None):
    """Run every applicable check; returns ``(results, verdicts)``.

    ``verdicts`` maps check names to booleans; a check that raises is
    recorded with its error and counts as failed.
    """
    opts = opts or VerificationOptions()
    n = v.dimension
    u = legendre_transform(v)
    results: dict = {}
    verdicts: dict = {}

    def attempt(name, fn):
        if name in opts.skip:
            return
        try:
            results[name], verdicts[name] = fn()
        except (DomainError, ValueError, NotImplementedError) as exc:
            results[name] = {"error": f"{type(exc).__name__}: {exc}"}
            verdicts[name] = False

    def barycenter():
        r = barycenter_residual(v)
        return {"residual": r}, r <= 1e-8

    def inequalities():
        r = inequality_suite(v)
        return r, bool(r["passed"])

    def residual():
        r = ma_residual(v, k, samples=opts.samples, seed=opts.seed)
        return r.to_json(), r.max_relative_residual <= opts.residual_tolerance

    def exponents():
        fits = []
        window = opts.exponent_window or default_exponent_window(v)
        for face in range(len(v.domain.normals)):
            fit = fit_boundary_exponent(v, face, window, k=k)
            d = fit.to_json()
            d["relative_error"] = fit.relative_error
            d["hessian_positive_definite"] = fit.hessian_positive_definite
            fits.append(d)
        ok = all(f["relative_error"] <= opts.exponent_tolerance and f["hessian_positive_definite"]
                 for f in fits)
        return fits, ok

    def klartag():
        r = klartag_transform_check(u, k, samples=opts.samples, seed=opts.seed)
        d = r.to_json()
        scale_ok = abs(r.scaling_ratio / r.scaling_expected - 1.0) <= 1e-6
        return d, r.relative_spread <= opts.klartag_spread and scale_ok

    def ansatz():
        r = ansatz_residual(v, k, samples=opts.samples, seed=opts.seed)
        return r.to_json(), r.max_relative_deviation <= opts.ansatz_tolerance

    def pushforward():
        r = pushforward_check(u, v, k, N=opts.mc_samples, perturbations=opts.perturbations,
                              seed=opts.seed)
        return r.to_json() | {"moments_passed": r.moments_passed, "gaps_passed": r.gaps_passed}, r.passed

    def convexity():
        r = free_boundary_convexity_check(u, resolution=opts.convexity_resolution)
        return r.to_json(), r.passed

    attempt("barycenter", barycenter)
    attempt("inequalities", inequalities)
    attempt("ma_residual", residual)
    if _is_simplex(v.domain):
        attempt("exponent_fits", exponents)
    attempt("klartag", klartag)
    attempt("ansatz", ansatz)
    attempt("pushforward", pushforward)
    if n == 2:
        attempt("free_boundary_convexity", convexity)
    return _jsonable(results), {key: bool(val) for key, val in verdicts.items()}


def profile_rows(v: MaxAffineFunction, points: int = 2001) -> np.ndarray:
    """``y, v(y), v*(y)`` on a grid of a 1D domain."""
    lo, hi = v.domain.vertices[:, 0].min(), v.domain.vertices[:, 0].max()
    y = np.linspace(lo, hi, points)
    vals = v(y[:, None])
    vstar = -v.intercepts[v.active_piece(y[:, None])]
    return np.column_stack([y, vals, vstar])
