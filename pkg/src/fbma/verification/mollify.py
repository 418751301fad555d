"""Mollification of piecewise-affine convex functions.

``f_h = f * rho_h`` with the C-infinity bump ``rho(s) = C exp(-1/(1-|s|^2))``
supported in the unit ball.  The Hessian of ``f_h`` is computed exactly from
the interfaces of ``f``: across an interface between pieces with slopes
``c_i`` and ``c_l`` the distributional Hessian of ``f`` is the surface measure
times ``(c_l - c_i)(c_l - c_i)^T / |c_l - c_i|``.  Values and gradients use
closed forms in 1D and polar quadrature in 2D.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma

from ..convex import cell_complex
from ..geometry import Polytope

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def _bump(r2):
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def bump_constant(n: int) -> float:
    """Normalization making the bump a probability density on the unit ball of R^n."""
    sphere = 2.0 * np.pi ** (n / 2) / gamma(n / 2)
    radial, _ = quad(lambda r: np.exp(-1.0 / (1.0 - r * r)) * r ** (n - 1), 0.0, 1.0,
                     epsabs=1e-15, epsrel=1e-13)
    return 1.0 / (sphere * radial)


def bump(s, h: float) -> np.ndarray:
    """``rho_h(s) = h^-n rho(s/h)`` for points ``s`` of shape ``(N, n)``."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    n = s.shape[1]
    return bump_constant(n) * _bump(np.sum(s * s, axis=1) / h ** 2) / h ** n


def _gl_on(lo, hi):
    """Gauss-Legendre nodes/weights on the intervals ``[lo, hi]`` (vectorized)."""
    lo = np.asarray(lo, float)[..., None]
    hi = np.asarray(hi, float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (_GL_NODES + 1.0), half * _GL_WEIGHTS


def _kernels_1d(t):
    """``K0 = rho``, ``K1 = int_{-1}^t rho``, ``K2 = int_{-1}^t (t - s) rho`` for h = 1."""
    t = np.clip(np.asarray(t, float), -1.0, 1.0)
    c = bump_constant(1)
    s, w = _gl_on(-np.ones_like(t), t)
    r = c * _bump(s * s) * w
    k1 = r.sum(axis=-1)
    k2 = t * k1 - (s * r).sum(axis=-1)
    return c * _bump(t * t), k1, k2


class Mollified:
    """Smoothing of ``x -> max_i <c_i, x> + d_i`` at width ``h``.

    ``region`` must contain the ``h``-neighbourhood of every evaluation point;
    by default it is the bounding box of ``points`` passed to :meth:`prepare`.
    """

    def __init__(self, slopes, intercepts, h: float, region: Polytope | None = None):
        self.c = np.atleast_2d(np.asarray(slopes, dtype=float))
        self.d = np.asarray(intercepts, dtype=float).ravel()
        self.n = self.c.shape[1]
        if self.n > 2:
            raise NotImplementedError("mollified Hessians are implemented for n <= 2")
        if h <= 0:
            raise ValueError("smoothing width must be positive")
        self.h = float(h)
        self.region = region
        self._edges = None

    # -- setup ------------------------------------------------------------------
    def prepare(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.region is None or not np.all(self.region.contains(pts, tol=-self.h)):
            pad = 1.5 * self.h
            self.region = Polytope.box(pts.min(axis=0) - pad, pts.max(axis=0) + pad)
        cx = cell_complex(self.c, self.d, self.region)
        i, l, faces = cx.interfaces()
        jump = self.c[l] - self.c[i]
        if self.n == 1:
            pos = np.array([f[0, 0] for f in faces]) if faces else np.zeros(0)
            # orient the jumps left to right so they are nonnegative
            order = np.argsort(pos)
            self._edges = (pos[order], np.abs(jump[order, 0]))
            left = self.region.vertices[:, 0].min()
            self._base = int(np.argmax(self.c[:, 0] * left + self.d))
        else:
            segs = np.array([f[:2] for f in faces]) if faces else np.zeros((0, 2, 2))
            norm = np.linalg.norm(jump, axis=1)
            self._edges = (segs, jump, norm)
        return self

    def _ensure(self, pts):
        if self._edges is None or not np.all(self.region.contains(pts, tol=-self.h)):
            self.prepare(pts)

    # -- evaluation -------------------------------------------------------------
    def raw(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.max(x @ self.c.T + self.d, axis=1)

    def value_gradient_hessian(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        self._ensure(pts)
        if self.n == 1:
            return self._vgh_1d(pts)
        return self._vgh_2d(pts)

    def hessian(self, x):
        return self.value_gradient_hessian(x)[2]

    def _vgh_1d(self, pts):
        pos, jump = self._edges
        h = self.h
        x = pts[:, 0]
        a0, b0 = self.c[self._base, 0], self.d[self._base]
        t = (x[:, None] - pos[None, :]) / h
        k0, k1, k2 = _kernels_1d(t)
        # beyond the kernel support K1 = 1 and K2 = t exactly
        far = t >= 1.0
        k2 = np.where(far, t, k2)
        val = a0 * x + b0 + h * (k2 * jump).sum(axis=1)
        grad = a0 + (k1 * jump).sum(axis=1)
        hess = (k0 * jump).sum(axis=1) / h
        return val, grad[:, None], hess[:, None, None]

    def _vgh_2d(self, pts, n_rad: int = 24, n_ang: int = 96):
        segs, jump, norm = self._edges
        h = self.h
        # polar rule on the unit disk for value and gradient
        r, wr = _gl_on(np.zeros(1), np.ones(1))
        r, wr = r[0], wr[0]
        th = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        dirs = np.column_stack([np.cos(th), np.sin(th)])
        S = (r[:, None, None] * dirs[None]).reshape(-1, 2)
        W = (wr * r)[:, None].repeat(n_ang, axis=1).ravel() * (2 * np.pi / n_ang)
        rho = bump_constant(2) * _bump(np.sum(S * S, axis=1))
        # d rho/ds = rho * (-2 s / (1 - |s|^2)^2)
        drho = rho[:, None] * (-2.0 * S / (1.0 - np.sum(S * S, axis=1))[:, None] ** 2)
        vals = np.empty(len(pts))
        grads = np.empty((len(pts), 2))
        hess = np.zeros((len(pts), 2, 2))
        lin = pts @ self.c.T + self.d
        top = lin.max(axis=1)
        g = np.argmax(lin, axis=1)
        for p, x in enumerate(pts):
            gap = top[p] - lin[p]
            cand = np.nonzero(gap <= h * np.linalg.norm(self.c - self.c[g[p]], axis=1) + 1e-14)[0]
            y = x - h * S
            f = np.max(y @ self.c[cand].T + self.d[cand], axis=1)
            vals[p] = np.sum(W * rho * f)
            # integrate by parts: grad f_h(x) = (1/h) int f(x - h s) grad rho(s) ds
            grads[p] = np.sum((W * f)[:, None] * drho, axis=0) / h
            hess[p] = self._edge_hessian(x, segs, jump, norm)
        return vals, grads, hess

    def _edge_hessian(self, x, segs, jump, norm):
        h = self.h
        if len(segs) == 0:
            return np.zeros((2, 2))
        p0, p1 = segs[:, 0], segs[:, 1]
        d = p1 - p0
        L = np.linalg.norm(d, axis=1)
        e = d / np.maximum(L, 1e-300)[:, None]
        q = x - p0
        tproj = np.sum(q * e, axis=1)
        dist2 = np.sum(q * q, axis=1) - tproj ** 2
        half = np.sqrt(np.maximum(h * h - dist2, 0.0))
        lo = np.maximum(tproj - half, 0.0)
        hi = np.minimum(tproj + half, L)
        near = (dist2 < h * h) & (hi > lo)
        if not np.any(near):
            return np.zeros((2, 2))
        s, w = _gl_on(lo[near], hi[near])
        P = p0[near][:, None, :] + s[..., None] * e[near][:, None, :]
        rho = bump((x - P).reshape(-1, 2), h).reshape(s.shape)
        mass = np.sum(rho * w, axis=1)
        J = jump[near]
        coef = mass / norm[near]
        return np.einsum("e,ei,ej->ij", coef, J, J)
