"""Drift/dispersion coefficient fields and scalar densities with derivatives.

Finite-difference fallbacks use the standard optimal central-difference steps
h1 = eps^(1/3) (1+|x|) for first and h2 = eps^(1/4) (1+|x|) for second order.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import MissingDerivatives

_EPS = np.finfo(float).eps
_H1 = _EPS ** (1.0 / 3.0)
_H2 = _EPS ** 0.25


def _fd_step1(x):
    return _H1 * (1.0 + float(np.linalg.norm(x)))


def _fd_step2(x):
    return _H2 * (1.0 + float(np.linalg.norm(x)))


class CoefficientField:
    """Drift b(x), dispersion sigma(x) and diffusion a = sigma sigma^T.

    Optional analytic derivative evaluators:
      db(x)  -> (J, J) Jacobian db_i/dx_j
      da(x)  -> (J, J, J) with da[i, j, k] = d a_ij / dx_k
      d2a(x) -> (J, J, J, J) with d2a[i, j, k, l] = d^2 a_ij / dx_k dx_l
    When absent, central finite differences are used unless fd=False, in which
    case derivative access raises MissingDerivatives.
    """

    def __init__(self, b: Callable, sigma: Callable, db=None, da=None, d2a=None,
                 fd: bool = True, bounded: Optional[bool] = None):
        self._b = b
        self._sigma = sigma
        self._db = db
        self._da = da
        self._d2a = d2a
        self.fd = fd
        self.bounded = bounded
        self.is_constant = False
        self._const_b = None
        self._const_a = None

    # -- construction helpers ------------------------------------------------
    @classmethod
    def constant(cls, b, sigma) -> "CoefficientField":
        b = np.asarray(b, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = np.diag(sigma)
        J = len(b)
        zj = np.zeros((J, J))
        za = np.zeros((J, J, J))
        z2 = np.zeros((J, J, J, J))
        out = cls(lambda x: b, lambda x: sigma,
                  db=lambda x: zj, da=lambda x: za, d2a=lambda x: z2,
                  bounded=True)
        out.is_constant = True
        out._const_b = b
        out._const_a = sigma @ sigma.T
        return out

    # -- evaluators ------------------------------------------------------------
    def b(self, x) -> np.ndarray:
        return np.asarray(self._b(np.asarray(x, dtype=float)), dtype=float)

    def sigma(self, x) -> np.ndarray:
        s = np.asarray(self._sigma(np.asarray(x, dtype=float)), dtype=float)
        if s.ndim == 1:
            s = np.diag(s)
        return s

    def a(self, x) -> np.ndarray:
        s = self.sigma(x)
        return s @ s.T

    @property
    def has_analytic_derivatives(self) -> bool:
        return self._db is not None and self._da is not None and self._d2a is not None

    def db(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._db is not None:
            return np.asarray(self._db(x), dtype=float)
        if not self.fd:
            raise MissingDerivatives("drift Jacobian unavailable")
        J = len(x)
        h = _fd_step1(x)
        out = np.empty((J, J))
        for k in range(J):
            e = np.zeros(J)
            e[k] = h
            out[:, k] = (self.b(x + e) - self.b(x - e)) / (2 * h)
        return out

    def da(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._da is not None:
            return np.asarray(self._da(x), dtype=float)
        if not self.fd:
            raise MissingDerivatives("diffusion gradient unavailable")
        J = len(x)
        h = _fd_step1(x)
        out = np.empty((J, J, J))
        for k in range(J):
            e = np.zeros(J)
            e[k] = h
            out[:, :, k] = (self.a(x + e) - self.a(x - e)) / (2 * h)
        return out

    def d2a(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._d2a is not None:
            return np.asarray(self._d2a(x), dtype=float)
        if not self.fd:
            raise MissingDerivatives("diffusion Hessian unavailable")
        J = len(x)
        h = _fd_step2(x)
        out = np.empty((J, J, J, J))
        a0 = self.a(x)
        for k in range(J):
            ek = np.zeros(J)
            ek[k] = h
            for l in range(k, J):
                el = np.zeros(J)
                el[l] = h
                if k == l:
                    d = (self.a(x + ek) - 2 * a0 + self.a(x - ek)) / (h * h)
                else:
                    d = (self.a(x + ek + el) - self.a(x + ek - el)
                         - self.a(x - ek + el) + self.a(x - ek - el)) / (4 * h * h)
                out[:, :, k, l] = d
                out[:, :, l, k] = d
        return out

    def validate(self, points, psd_tol: float = 1e-10):
        """Check a(x) symmetric and positive semidefinite at the given points."""
        for x in np.atleast_2d(points):
            a = self.a(x)
            if not np.allclose(a, a.T, atol=1e-12):
                raise ValueError(f"a(x) not symmetric at {x}")
            w = np.linalg.eigvalsh(0.5 * (a + a.T))
            if float(w.min()) < -psd_tol:
                raise ValueError(f"a(x) has eigenvalue {w.min():.3e} < 0 at {x}")
        return True


class Density:
    """Nonnegative scalar field with value / gradient / Hessian access."""

    def __init__(self, value: Callable, grad=None, hess=None, fd: bool = True,
                 name: str = ""):
        self._value = value
        self._grad = grad
        self._hess = hess
        self.fd = fd
        self.name = name
        self.scale = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * float(self._value(x))

    def value_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.scale * np.array([float(self._value(x)) for x in X])

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._grad is not None:
            return self.scale * np.asarray(self._grad(x), dtype=float)
        if not self.fd:
            raise MissingDerivatives("density gradient unavailable")
        J = len(x)
        h = _fd_step1(x)
        out = np.empty(J)
        for k in range(J):
            e = np.zeros(J)
            e[k] = h
            out[k] = (float(self._value(x + e)) - float(self._value(x - e))) / (2 * h)
        return self.scale * out

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._hess is not None:
            return self.scale * np.asarray(self._hess(x), dtype=float)
        if not self.fd:
            raise MissingDerivatives("density Hessian unavailable")
        J = len(x)
        h = _fd_step2(x)
        out = np.empty((J, J))
        v0 = float(self._value(x))
        for k in range(J):
            ek = np.zeros(J)
            ek[k] = h
            for l in range(k, J):
                el = np.zeros(J)
                el[l] = h
                if k == l:
                    d = (float(self._value(x + ek)) - 2 * v0
                         + float(self._value(x - ek))) / (h * h)
                else:
                    d = (float(self._value(x + ek + el)) - float(self._value(x + ek - el))
                         - float(self._value(x - ek + el))
                         + float(self._value(x - ek - el))) / (4 * h * h)
                out[k, l] = d
                out[l, k] = d
        return self.scale * out

    @property
    def has_analytic_derivatives(self) -> bool:
        return self._grad is not None and self._hess is not None

    def rescaled(self, factor: float) -> "Density":
        d = Density(self._value, self._grad, self._hess, fd=self.fd, name=self.name)
        d.scale = self.scale * factor
        return d
