"""High-accuracy 1D reference profile by shooting.

On ``P = [-1, 1]`` the equation reads ``v'' = v^-3 (v - y v')^-k`` with
``v* = y v' - v = 0`` at ``y = +-1``.  The solution is even, so we shoot from
``y = 0`` with ``v(0) = a``, ``v'(0) = 0`` and adjust ``a`` until ``w = v - y v'``
vanishes exactly at ``y = 1``.

Close to the free boundary ``v''`` blows up like ``(1-y)^(-k/(k+1))``, so once
``w`` is small the integration switches to ``w`` as independent variable:
``dy/dw = -w^k v^3 / y``, ``dv/dw = v' dy/dw``, ``dv'/dw = -1/y``, which is
smooth up to ``w = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from ..errors import ConvergenceError

_RTOL = 1e-12
_ATOL = 1e-14


def _phase1(a: float, k: int, y_switch: float = 0.5):
    """Integrate in y from 0 until w = a/2 or y = y_switch."""

    def rhs(y, s):
        v, dv = s
        w = v - y * dv
        return [dv, v ** -3 * w ** -k]

    def hit(y, s):
        return s[0] - y * s[1] - 0.5 * a
    hit.terminal = True

    sol = solve_ivp(rhs, (0.0, y_switch), [a, 0.0], method="DOP853", rtol=_RTOL,
                    atol=_ATOL, events=hit, dense_output=True)
    return sol


def _phase2(state, k: int):
    """Integrate in w from w1 down to 0; state = (y, v, v')."""
    y1, v1, d1 = state
    w1 = v1 - y1 * d1

    def rhs(w, s):
        y, v, dv = s
        dy = -(max(w, 0.0) ** k) * v ** 3 / y
        return [dy, dv * dy, -1.0 / y]

    return solve_ivp(rhs, (w1, 0.0), [y1, v1, d1], method="DOP853", rtol=_RTOL,
                     atol=_ATOL, dense_output=True)


def _shoot(a: float, k: int):
    s1 = _phase1(a, k)
    y1 = s1.t[-1]
    v1, d1 = s1.y[:, -1]
    if v1 - y1 * d1 <= 0 or not s1.success:
        return s1, None, np.nan
    s2 = _phase2((y1, v1, d1), k)
    return s1, s2, s2.y[0, -1]


@dataclass
class ShootingProfile:
    """Even solution on [-1, 1]; callable on arrays of y."""

    k: int
    v0: float
    y: np.ndarray       # increasing nodes on [0, 1]
    v: np.ndarray
    dv: np.ndarray
    w_nodes: np.ndarray
    boundary_value: float
    boundary_slope: float
    boundary_vstar: float

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.y, self.v, self.dv)
        self._dspline = self._spline.derivative()

    def __call__(self, y) -> np.ndarray:
        y = np.abs(np.asarray(y, dtype=float))
        if np.any(y > 1 + 1e-12):
            raise ValueError("profile is defined on [-1, 1]")
        return self._spline(np.minimum(y, 1.0))

    def derivative(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.sign(y) * self._dspline(np.minimum(np.abs(y), 1.0))

    def second_derivative(self, y) -> np.ndarray:
        """``v''`` from the equation itself (exact given v, v')."""
        v = self(y)
        w = v - np.asarray(y) * self.derivative(y)
        return v ** -3 * w ** -float(self.k)

    def vstar(self, y) -> np.ndarray:
        return np.asarray(y) * self.derivative(y) - self(y)

    def to_rows(self):
        ys = np.r_[-self.y[::-1], self.y[1:]]
        vs = np.r_[self.v[::-1], self.v[1:]]
        ds = np.r_[-self.dv[::-1], self.dv[1:]]
        return np.column_stack([ys, vs, ds, ys * ds - vs])


def ode_shooting_oracle(k: int, n: int = 1, bracket=(0.3, 5.0), samples: int = 4000) -> ShootingProfile:
    """Reference solution of ``v'' = v^-3 (-v*)^-k`` on [-1, 1], ``v*(+-1) = 0``."""
    if n != 1:
        raise ValueError("the shooting oracle is one-dimensional")
    if int(k) != k or k < 1:
        raise ValueError("the shooting oracle needs an integer k >= 1")
    k = int(k)

    def miss(a):
        return _shoot(a, k)[2] - 1.0

    lo, hi = bracket
    grid = np.geomspace(lo, hi, 25)
    vals = np.array([miss(a) for a in grid])
    ok = np.isfinite(vals)
    sign_change = np.nonzero(ok[:-1] & ok[1:] & (np.sign(vals[:-1]) != np.sign(vals[1:])))[0]
    if len(sign_change) == 0:
        raise ConvergenceError("no bracket for the shooting parameter",
                               {"scan_a": grid.tolist(), "scan_miss": vals.tolist()})
    i = sign_change[0]
    a = brentq(miss, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15, maxiter=200)
    s1, s2, _ = _shoot(a, k)

    # nodes: phase 1 uniform in y; phase 2 with 1 - y ~ w^(k+1) spaced like (1 - s)^2
    y1 = s1.t[-1]
    n1 = samples // 2
    ys1 = np.linspace(0.0, y1, n1, endpoint=False)
    st1 = s1.sol(ys1)
    w1 = s2.t[0]
    sgrid = np.linspace(0.0, 1.0, samples - n1)
    ws = w1 * (1.0 - sgrid) ** (2.0 / (k + 1))
    st2 = s2.sol(ws)
    y = np.r_[ys1, st2[0]]
    v = np.r_[st1[0], st2[1]]
    dv = np.r_[st1[1], st2[2]]
    y[-1] = 1.0
    keep = np.r_[np.diff(y) > 1e-14, True]
    y, v, dv = y[keep], v[keep], dv[keep]
    wn = np.r_[np.full(n1, np.nan), ws][keep]
    return ShootingProfile(k, a, y, v, dv, wn,
                           boundary_value=float(s2.y[1, -1]), boundary_slope=float(s2.y[2, -1]),
                           boundary_vstar=float(s2.y[2, -1] * s2.y[0, -1] - s2.y[1, -1]))


def boundary_remainder(profile: ShootingProfile):
    """Distances ``t = 1 - y`` and remainders ``v - v(1) - v'(1)(y - 1)`` on phase-2 nodes."""
    sel = np.isfinite(profile.w_nodes) & (profile.y < 1.0)
    t = 1.0 - profile.y[sel]
    r = profile.v[sel] - profile.boundary_value + profile.boundary_slope * t
    return t, r


def n0_anchor(k: int, x) -> np.ndarray:
    """``(phi')^k phi''`` for ``phi(x) = x^((k+2)/(k+1))``; constant in x."""
    x = np.asarray(x, dtype=float)
    p = (k + 2) / (k + 1)
    d1 = p * x ** (p - 1)
    d2 = p * (p - 1) * x ** (p - 2)
    return d1 ** k * d2
