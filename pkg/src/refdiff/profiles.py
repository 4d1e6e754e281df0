"""Scalar profiles: C^2 piecewise-polynomial cutoffs and the singular ramp.

Cutoffs use the quintic smoothstep (vanishing first and second derivatives at
both ends), so every profile here is exactly C^2 with closed-form
derivatives.  The singular ramp l is the piecewise function that is zero
below delta, rises with curvature exactly 2 on (delta + sqrt(delta), eps),
bends down with curvature -2 sqrt(eps) on (eps, eps + sqrt(eps)), and is
constant beyond; the published branch constants are kept and the connecting
segment on (delta, delta + sqrt(delta)] is the unique chord making the value
and upper slope match (the stated cubic there is inconsistent with the other
branches by a factor of three).

The mollified ramp averages l over the left-shifted window
[s + w/2, s + w] against a C^2 bump kernel, which keeps every one-sided
curvature guarantee exact: the curvature band bound holds for all
s >= eps - w/2 (reported as kappa = w/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import BadParameters, BadThresholds

_GAUSS_N = 10
_GX, _GW = np.polynomial.legendre.leggauss(_GAUSS_N)


class PiecewisePoly:
    """Piecewise polynomial with vectorized value and two derivatives.

    pieces[i] covers (breaks[i-1], breaks[i]]; pieces[0] covers (-inf,
    breaks[0]] and pieces[-1] covers (breaks[-1], inf).
    """

    def __init__(self, breaks, pieces):
        self.breaks = np.asarray(breaks, dtype=float)
        self.pieces = [p if isinstance(p, Polynomial) else Polynomial(p)
                       for p in pieces]
        assert len(self.pieces) == len(self.breaks) + 1
        self._d1 = [p.deriv() for p in self.pieces]
        self._d2 = [p.deriv(2) for p in self.pieces]

    def _eval(self, polys, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        idx = np.searchsorted(self.breaks, s, side="left")
        out = np.empty_like(s)
        for i in np.unique(idx):
            m = idx == i
            out[m] = polys[i](s[m])
        return float(out[0]) if scalar else out

    def value(self, s):
        return self._eval(self.pieces, s)

    def d1(self, s):
        return self._eval(self._d1, s)

    def d2(self, s):
        return self._eval(self._d2, s)


@dataclass
class Profile1D:
    """A scalar profile with two derivatives and its construction parameters."""

    value: Callable
    d1: Callable
    d2: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, s):
        return self.value(s)


def _smoothstep() -> Polynomial:
    # 10 t^3 - 15 t^4 + 6 t^5: C^2 step from 0 to 1 on [0, 1]
    return Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


def _affine(lo: float, hi: float) -> Polynomial:
    return Polynomial([-lo / (hi - lo), 1.0 / (hi - lo)])


_CUTOFF_CACHE: dict = {}


def cutoff(kind: str, thresholds) -> Profile1D:
    """C^2 monotone plateau profile.

    kind 'xi': 1 below thresholds[0], 0 above thresholds[1] (interior bumps).
    kind 'zeta': same shape with the plateau labels of the boundary-bump
    cutoff (1 up to 5 lam / 4, 0 beyond 23 lam / 12 when thresholds are built
    from lam).  Raises BadThresholds unless thresholds are increasing.
    """
    lo, hi = float(thresholds[0]), float(thresholds[1])
    if not lo < hi:
        raise BadThresholds(f"thresholds must increase, got {thresholds}")
    if kind not in ("xi", "zeta"):
        raise BadThresholds(f"unknown cutoff kind {kind!r}")
    key = (kind, lo, hi)
    if key not in _CUTOFF_CACHE:
        step = _smoothstep()(_affine(lo, hi))
        pw = PiecewisePoly([lo, hi],
                           [Polynomial([1.0]), 1.0 - step, Polynomial([0.0])])
        _CUTOFF_CACHE[key] = Profile1D(
            pw.value, pw.d1, pw.d2, params={"kind": kind, "lo": lo, "hi": hi})
    return _CUTOFF_CACHE[key]


def rising_cutoff(lo: float, hi: float) -> Profile1D:
    """C^2 profile rising from 0 (below lo) to 1 (above hi)."""
    if not lo < hi:
        raise BadThresholds(f"thresholds must increase, got {(lo, hi)}")
    key = ("rising", float(lo), float(hi))
    if key not in _CUTOFF_CACHE:
        step = _smoothstep()(_affine(lo, hi))
        pw = PiecewisePoly([lo, hi],
                           [Polynomial([0.0]), step, Polynomial([1.0])])
        _CUTOFF_CACHE[key] = Profile1D(pw.value, pw.d1, pw.d2,
                                       params={"lo": lo, "hi": hi})
    return _CUTOFF_CACHE[key]


def zeta_for_band(lam: float) -> Profile1D:
    """The decreasing boundary-bump cutoff: 1 on (-inf, 5 lam/4], 0 beyond 23 lam/12."""
    return cutoff("zeta", (1.25 * lam, 23.0 * lam / 12.0))


# ---------------------------------------------------------------------------
# Singular ramp
# ---------------------------------------------------------------------------

def _exact_ramp(delta: float, eps: float) -> PiecewisePoly:
    rd = np.sqrt(delta)
    re = np.sqrt(eps)
    s1 = delta + rd
    A = 2.0 * delta * (rd + 1.0) - s1 * s1
    plateau = A + eps * eps + eps * re
    chord = Polynomial([-2.0 * s1 * delta, 2.0 * s1])          # 2(delta+rd)(s-delta)
    mid = Polynomial([A, 0.0, 1.0])                            # s^2 + A
    down = plateau - re * Polynomial([eps + re, -1.0]) ** 2    # plateau - re (s-eps-re)^2
    return PiecewisePoly(
        [delta, s1, eps, eps + re],
        [Polynomial([0.0]), chord, mid, down, Polynomial([plateau])],
    )


class RampProfile:
    """Mollified singular ramp with exact one-sided curvature guarantees.

    value/d1/d2 evaluate the mollified profile; the exact piecewise profile is
    available as exact_value/exact_d1/exact_d2.  kappa = width/2 is the
    certified margin: |d2| <= 2 sqrt(eps) for s >= eps - kappa, and d2 >= 2 on
    [delta + 2 sqrt(delta), eps/2].
    """

    def __init__(self, delta: float, eps: float, width: Optional[float] = None):
        if not (0.0 < delta < eps):
            raise BadParameters(f"need 0 < delta < eps, got {delta}, {eps}")
        if delta + np.sqrt(delta) >= eps:
            raise BadParameters(
                f"need delta + sqrt(delta) < eps, got {delta + np.sqrt(delta):.4g} >= {eps}")
        if eps >= 0.4:
            raise BadParameters("ramp bounds require eps < 0.4")
        self.delta = float(delta)
        self.eps = float(eps)
        if width is None:
            width = min(delta / 2.0, np.sqrt(delta) / 4.0, eps / 8.0)
        if not (0.0 < width < delta):
            raise BadParameters(f"mollification width must lie in (0, delta), got {width}")
        self.width = float(width)
        self.kappa = self.width / 2.0
        self.exact = _exact_ramp(delta, eps)
        self.plateau = float(self.exact.pieces[-1].coef[0])
        # slope jump of the exact ramp at s = delta (nonnegative kink)
        self._kink_jump = 2.0 * (delta + np.sqrt(delta))
        self.params = {"delta": delta, "eps": eps, "w": self.width,
                       "kappa": self.kappa, "plateau": self.plateau}

    # -- kernel -----------------------------------------------------------------
    def _kernel(self, t):
        """C^2 bump density on [w/2, w] integrating to one."""
        w = self.width
        tau = (t - 0.75 * w) / (0.25 * w)
        out = np.zeros_like(np.asarray(t, dtype=float))
        m = np.abs(tau) < 1.0
        out[m] = (35.0 / (8.0 * 0.25 * w * 4.0)) * (1.0 - tau[m] ** 2) ** 3
        # normalization: integral of (1-tau^2)^3 over [-1,1] is 32/35, times w/4
        return out

    def _window_quad(self, s: float, f) -> float:
        """Exact quadrature of f(s+t) * kernel(t) over t in [w/2, w]."""
        w = self.width
        lo, hi = s + w / 2.0, s + w
        cuts = [lo, hi]
        for b in self.exact.breaks:
            if lo < b < hi:
                cuts.append(float(b))
        cuts = sorted(set(cuts))
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            u = mid + half * _GX
            total += half * float(np.sum(_GW * f(u) * self._kernel(u - s)))
        return total

    # -- evaluation ------------------------------------------------------------
    def value(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        out = np.empty_like(s)
        w = self.width
        for i, si in enumerate(s):
            if si + w <= self.delta:
                out[i] = 0.0
            elif si + w / 2.0 >= self.eps + np.sqrt(self.eps):
                out[i] = self.plateau
            else:
                out[i] = self._window_quad(si, self.exact.value)
        return float(out[0]) if scalar else out

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        out = np.empty_like(s)
        w = self.width
        for i, si in enumerate(s):
            if si + w <= self.delta or si + w / 2.0 >= self.eps + np.sqrt(self.eps):
                out[i] = 0.0
            else:
                out[i] = self._window_quad(si, self.exact.d1)
        return float(out[0]) if scalar else out

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        out = np.empty_like(s)
        w = self.width
        for i, si in enumerate(s):
            if si + w <= self.delta or si + w / 2.0 >= self.eps + np.sqrt(self.eps):
                out[i] = 0.0
            else:
                acc = self._window_quad(si, self.exact.d2)
                # slope kink of the exact ramp at delta enters as a point mass
                acc += self._kink_jump * float(self._kernel(np.array([self.delta - si]))[0])
                out[i] = acc
        return float(out[0]) if scalar else out

    def as_profile(self) -> Profile1D:
        return Profile1D(self.value, self.d1, self.d2, params=dict(self.params))


def ramp_profile(delta: float, eps: float, width: Optional[float] = None) -> RampProfile:
    """Build the mollified singular ramp (raises BadParameters when inadmissible)."""
    return RampProfile(delta, eps, width)
