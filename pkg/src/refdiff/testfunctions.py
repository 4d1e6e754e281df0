"""Admissible test functions: bumps, ramps, and assembled separation families.

The admissible class consists of C^2 functions that are compactly supported
up to a constant, constant near every declared singular point, and whose
gradient makes a nonpositive inner product with every reflection direction on
the boundary.  Functions here are built so that the sign condition holds
structurally (products of a one-sided cutoff slope and a certified-positive
inner product), not just numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import domain as dom
from .cones import MollifiedConeDistance, PolyCone, fattened_generators
from .errors import (
    BadParameters,
    NotInU,
    QPFailure,
    RadiusTooLarge,
    SamplingFailure,
    TooClose,
    UnboundedUnsupported,
)
from .profiles import RampProfile, cutoff, rising_cutoff, zeta_for_band


def _as_batch(y, J):
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 0:
        Y = Y.reshape(1, 1)
        return Y, True
    if Y.ndim == 1:
        if J == 1 and Y.shape[0] != 1:
            return Y[:, None], False
        return Y[None, :], True
    return Y, False


class TestFunction:
    """C^2 function with value/gradient/Hessian access and class metadata."""

    __test__ = False          # not a pytest collection target

    def __init__(self, dim, value, gradient, hessian, center=None,
                 support_radius=np.inf, constant_outside=0.0,
                 claims_in_class=False, claims_negated_in_class=False,
                 constant_near_singular=True, bound_triple=None, info=None):
        self.dim = dim
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.center = None if center is None else np.asarray(center, dtype=float)
        self.support_radius = float(support_radius)
        self.constant_outside = float(constant_outside)
        self.claims_in_class = claims_in_class
        self.claims_negated_in_class = claims_negated_in_class
        self.constant_near_singular = constant_near_singular
        self.bound_triple = bound_triple
        self.info = info or {}

    def value(self, y):
        Y, single = _as_batch(y, self.dim)
        out = self._value(Y)
        return float(out[0]) if single else out

    __call__ = value

    def gradient(self, y):
        Y, single = _as_batch(y, self.dim)
        out = self._gradient(Y)
        return out[0] if single else out

    def hessian(self, y):
        Y, single = _as_batch(y, self.dim)
        out = self._hessian(Y)
        return out[0] if single else out

    def scaled(self, c: float) -> "TestFunction":
        c = float(c)
        return TestFunction(
            self.dim,
            lambda Y: c * self._value(Y),
            lambda Y: c * self._gradient(Y),
            lambda Y: c * self._hessian(Y),
            center=self.center, support_radius=self.support_radius,
            constant_outside=c * self.constant_outside,
            claims_in_class=(self.claims_in_class if c >= 0 else self.claims_negated_in_class),
            claims_negated_in_class=(self.claims_negated_in_class if c >= 0 else self.claims_in_class),
            constant_near_singular=self.constant_near_singular,
            info=dict(self.info, scaled=c))

    def __neg__(self):
        return self.scaled(-1.0)

    def check_derivatives(self, probes, rtol_grad=1e-5, rtol_hess=1e-4):
        """Central-difference consistency of gradient and Hessian at probe points."""
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        J = self.dim
        worst_g, worst_h = 0.0, 0.0
        for x in probes:
            g = self.gradient(x)
            h_an = self.hessian(x)
            hstep = 1e-6 * (1.0 + np.linalg.norm(x))
            g_fd = np.empty(J)
            for k in range(J):
                e = np.zeros(J)
                e[k] = hstep
                g_fd[k] = (self.value(x + e) - self.value(x - e)) / (2 * hstep)
            worst_g = max(worst_g, float(np.max(np.abs(g - g_fd)))
                          / (1.0 + float(np.max(np.abs(g)))))
            hstep2 = 1e-5 * (1.0 + np.linalg.norm(x))
            h_fd = np.empty((J, J))
            for k in range(J):
                e = np.zeros(J)
                e[k] = hstep2
                h_fd[:, k] = (self.gradient(x + e) - self.gradient(x - e)) / (2 * hstep2)
            h_fd = 0.5 * (h_fd + h_fd.T)
            worst_h = max(worst_h, float(np.max(np.abs(h_an - h_fd)))
                          / (1.0 + float(np.max(np.abs(h_an)))))
        return {"grad_err": worst_g, "hess_err": worst_h,
                "grad_ok": worst_g <= rtol_grad, "hess_ok": worst_h <= rtol_hess}


def combine(funcs: Sequence[TestFunction], coeffs=None) -> TestFunction:
    """Finite linear combination of test functions."""
    funcs = list(funcs)
    if not funcs:
        raise ValueError("empty combination")
    if coeffs is None:
        coeffs = np.ones(len(funcs))
    coeffs = np.asarray(coeffs, dtype=float)
    J = funcs[0].dim

    def value(Y):
        out = np.zeros(len(Y))
        for c, f in zip(coeffs, funcs):
            out += c * f._value(Y)
        return out

    def gradient(Y):
        out = np.zeros_like(Y)
        for c, f in zip(coeffs, funcs):
            out += c * f._gradient(Y)
        return out

    def hessian(Y):
        out = np.zeros((len(Y), J, J))
        for c, f in zip(coeffs, funcs):
            out += c * f._hessian(Y)
        return out

    centers = [f.center for f in funcs if f.center is not None]
    if centers and all(np.isfinite(f.support_radius) for f in funcs):
        center = np.mean(centers, axis=0)
        rad = max(float(np.linalg.norm(f.center - center)) + f.support_radius
                  for f in funcs if f.center is not None)
    else:
        center, rad = None, np.inf
    pos = bool(np.all(coeffs >= 0))
    neg = bool(np.all(coeffs <= 0))
    return TestFunction(
        J, value, gradient, hessian, center=center, support_radius=rad,
        constant_outside=float(np.dot(coeffs, [f.constant_outside for f in funcs])),
        claims_in_class=pos and all(f.claims_in_class for f in funcs),
        claims_negated_in_class=(neg and all(f.claims_in_class for f in funcs))
        or (pos and all(f.claims_negated_in_class for f in funcs)),
        constant_near_singular=all(f.constant_near_singular for f in funcs),
        info={"kind": "combination", "n": len(funcs)})


# ---------------------------------------------------------------------------
# Interior bumps
# ---------------------------------------------------------------------------

def interior_bump(domain: dom.DomainSpec, x, r: float) -> TestFunction:
    """Radial bump xi(|y-x|^2 / r): one on the half-radius ball, zero outside
    the radius-sqrt(r) ball, which must fit strictly inside the domain."""
    x = np.asarray(x, dtype=float)
    d = dom.distance_to_boundary(domain, x)
    if math.sqrt(r) >= d:
        raise TooClose(f"sqrt(r)={math.sqrt(r):.3g} reaches the boundary (dist {d:.3g})")
    xi = cutoff("xi", (0.5, 1.0))
    J = domain.dimension

    def value(Y):
        z = np.einsum("ij,ij->i", Y - x, Y - x) / r
        return xi.value(z)

    def gradient(Y):
        D = Y - x
        z = np.einsum("ij,ij->i", D, D) / r
        return xi.d1(z)[:, None] * (2.0 / r) * D

    def hessian(Y):
        D = Y - x
        z = np.einsum("ij,ij->i", D, D) / r
        eye = np.eye(J)
        t1 = xi.d1(z)[:, None, None] * (2.0 / r) * eye[None, :, :]
        t2 = xi.d2(z)[:, None, None] * (4.0 / r ** 2) * np.einsum("ni,nj->nij", D, D)
        return t1 + t2

    rho = math.sqrt(r)
    sup_d1 = float(np.max(np.abs(xi.d1(np.linspace(0.4, 1.1, 201)))))
    sup_d2 = float(np.max(np.abs(xi.d2(np.linspace(0.4, 1.1, 201)))))
    # |grad| <= 2 ||xi'|| / rho and sum |d2| <= (4 J^2 ||xi''|| + 2 J ||xi'||) / rho^2
    return TestFunction(
        J, value, gradient, hessian, center=x, support_radius=rho,
        constant_outside=0.0, claims_in_class=True, claims_negated_in_class=True,
        bound_triple=(1.0, 2.0 * sup_d1 / rho,
                      (4.0 * J * J * sup_d2 + 2.0 * J * sup_d1) / rho ** 2),
        info={"kind": "interior", "r": r})


# ---------------------------------------------------------------------------
# Singular-point bumps and ramps
# ---------------------------------------------------------------------------

def singular_bump(domain: dom.DomainSpec, sp: dom.SingularPoint, r: float) -> TestFunction:
    """Half-space plateau bump at a singular point.

    Along h(y) = <v, y - x> the bump equals one for h <= r (1 - kappa/2) and
    vanishes for h >= r (1 - kappa/4), with kappa = 1 - c1 the exact
    half-space value of the separation constant.  On the closed domain its
    support lies in the c2 r ball and it equals one on the c1 r ball.
    """
    if not 0.0 < r < sp.radius / sp.c2:
        raise RadiusTooLarge(f"need r in (0, {sp.radius / sp.c2:.3g}), got {r}")
    # a smaller inner-ball certificate always remains valid; borderline
    # c1 = 1 declarations are shrunk so the separation constant stays positive
    c1 = min(sp.c1, 0.75)
    kappa = 1.0 - c1
    zeta = rising_cutoff(0.5, 1.0)
    J = domain.dimension
    x, v = sp.x, sp.v
    scale = 2.0 / (kappa * r)

    def _arg(Y):
        t = (r - (Y - x) @ v) / r
        return (2.0 / kappa) * np.maximum(0.0, t)

    def value(Y):
        return zeta.value(_arg(Y))

    def gradient(Y):
        s = zeta.d1(_arg(Y)) * scale
        return -s[:, None] * v[None, :]

    def hessian(Y):
        s = zeta.d2(_arg(Y)) * scale ** 2
        return s[:, None, None] * np.einsum("i,j->ij", v, v)[None, :, :]

    sgrid = np.linspace(-0.1, 2.2, 301)
    sup_d1 = float(np.max(np.abs(zeta.d1(sgrid))))
    sup_d2 = float(np.max(np.abs(zeta.d2(sgrid))))
    A = max(1.0, 2.0 * sup_d1 / kappa,
            4.0 * sup_d2 / kappa ** 2 * float(np.sum(np.abs(v)) ** 2))
    return TestFunction(
        J, value, gradient, hessian, center=x, support_radius=sp.c2 * r,
        constant_outside=0.0, claims_in_class=True, claims_negated_in_class=False,
        bound_triple=(A, A / r, A / r ** 2),
        info={"kind": "singular", "r": r, "kappa": kappa,
              "plateau_radius": c1 * r, "support_in_domain_only": True})


def singular_ramp(domain: dom.DomainSpec, sp: dom.SingularPoint, delta: float,
                  eps: float, coefficients=None, width: Optional[float] = None):
    """Monotone ramp l(h(y)) in the certificate direction of a singular point.

    Zero near the point, constant far away, with the negated function in the
    admissible class.  Returns (TestFunction, report dict); the report carries
    the certified sup / gradient / band-curvature constants.
    """
    others = [np.linalg.norm(q.x - sp.x) for q in domain.singular_points
              if q is not sp and np.linalg.norm(q.x - sp.x) > 0]
    eps0 = min([sp.radius] + [0.5 * d for d in others])
    if not np.isfinite(eps0):
        lo, hi = domain.bbox
        eps0 = float(np.linalg.norm(hi - lo))
    if 2.0 * (eps + math.sqrt(eps)) >= sp.alpha * eps0:
        raise BadParameters(
            f"eps too large: need 2(eps + sqrt(eps)) < alpha * eps0 = {sp.alpha * eps0:.3g}")
    ramp = RampProfile(delta, eps, width)
    J = domain.dimension
    x, v = sp.x, sp.v

    def value(Y):
        return ramp.value((Y - x) @ v)

    def gradient(Y):
        return ramp.d1((Y - x) @ v)[:, None] * v[None, :]

    def hessian(Y):
        return ramp.d2((Y - x) @ v)[:, None, None] * np.einsum("i,j->ij", v, v)[None, :, :]

    f = TestFunction(
        J, value, gradient, hessian, center=x,
        support_radius=(eps + math.sqrt(eps)) / sp.alpha,
        constant_outside=ramp.plateau, claims_in_class=False,
        claims_negated_in_class=True,
        info={"kind": "singular-ramp", "delta": delta, "eps": eps,
              "plateau": ramp.plateau, "kappa": ramp.kappa})
    sgrid = np.linspace(-0.05, 2.5 * (eps + math.sqrt(eps)), 4001)
    report = {
        "sup_value": float(np.max(ramp.value(sgrid))),
        "sup_gradient": float(np.max(np.abs(ramp.d1(sgrid)))),
        "sup_bound": 5.0 * eps,
        "grad_bound": 2.0 * math.sqrt(eps),
        "band": (delta + 2.0 * math.sqrt(delta), eps / 2.0),
        "band_curvature_min": float(np.min(ramp.d2(
            np.linspace(delta + 2.0 * math.sqrt(delta), eps / 2.0, 1001)))),
    }
    if coefficients is not None:
        pts = dom.sample_closure(domain, 200, seed=7, center=x,
                                 radius=min(sp.radius, eps0))
        report["ellipticity_min"] = float(min(v @ coefficients.a(y) @ v for y in pts))
    return f, report


# ---------------------------------------------------------------------------
# Boundary bumps
# ---------------------------------------------------------------------------

class StratumModel:
    """Geometry shared by all boundary bumps on one boundary stratum.

    Builds the separation certificate for the reflection hull, the fattened
    reflected cone, the mollified distance field on its band, and the scale
    constants of the bump construction.  For polyhedral domains with constant
    reflection all of this depends on the stratum only, so models are cached.
    """

    def __init__(self, domain: dom.DomainSpec, x, shrink_iters: int = 60):
        x = np.asarray(x, dtype=float)
        self.domain = domain
        self.idx = tuple(dom.active_set(domain, x))
        self.normals = np.stack([domain.pieces[i].unit_normal(x) for i in self.idx])
        self.gammas = np.stack([domain.pieces[i].gamma(x) for i in self.idx])
        J = domain.dimension
        k = len(self.idx)

        ok, cert, margin = dom.completely_s_at(domain, x)
        if not ok:
            raise NotInU(f"no positive normal certificate at {x} (margin {margin:.2e})")

        # separation of the reflected hull from the domain cone:
        # t* = max over hull of min_i <n_i, d>, must be negative
        c = np.zeros(k + 1)
        c[-1] = -1.0
        G = self.normals @ (-self.gammas.T)      # G[i, j] = <n_i, -gamma_j>
        rows = []
        for i in range(k):
            # t - <n_i, sum_j a_j (-gamma_j)> <= 0
            rows.append(np.concatenate([-G[i], [1.0]]))
        res = linprog(c, A_ub=np.array(rows), b_ub=np.zeros(k),
                      A_eq=np.concatenate([np.ones(k), [0.0]])[None, :], b_eq=[1.0],
                      bounds=[(0, None)] * k + [(None, None)], method="highs")
        if not res.success:
            raise QPFailure(f"separation LP failed at {x}")
        t_star = -res.fun
        if t_star >= 0:
            raise NotInU(f"reflected hull not separated at {x} (t*={t_star:.2e})")
        self.separation = -t_star

        self.delta = min(self.separation / 2.0, 0.3)
        gens = fattened_generators(-self.gammas, self.delta)
        self.margin = self.delta / math.sqrt(J)
        self.beta = self.separation / (4.0 * float(np.max(np.linalg.norm(gens, axis=1))))
        self.cone = PolyCone(gens)

        # inward unit direction q with -q pointing into the domain
        res_q = linprog(np.concatenate([np.zeros(k), [-1.0]]),
                        A_ub=np.hstack([-(self.normals @ self.gammas.T).T,
                                        np.ones((k, 1))]),
                        b_ub=np.zeros(k),
                        A_eq=np.concatenate([np.ones(k), [0.0]])[None, :], b_eq=[1.0],
                        bounds=[(0, None)] * k + [(None, None)], method="highs")
        if res_q.success and -res_q.fun > 1e-12:
            d_in = res_q.x[:k] @ self.gammas
        else:
            d_in = np.mean(self.gammas, axis=0)
            if np.min(self.normals @ d_in) <= 0:
                raise QPFailure(f"no inward reflection combination at {x}")
        self.q = -d_in / np.linalg.norm(d_in)
        self._q_norm = float(np.linalg.norm(d_in))

        # opening between the local domain cone and the reflected cone
        mu = self._domain_cone_gap(x)
        if mu <= 0:
            raise QPFailure(f"reflected cone touches the domain cone at {x}")
        self.R = 0.5
        lam = min(0.9 * mu / 3.0, 0.25, 0.9 * self._q_norm)
        for _ in range(shrink_iters):
            self.lam = lam
            self.eta = lam / 2.0
            self.eps_mol = lam / 12.0
            self.mol = MollifiedConeDistance(self.cone, self.eta, 2.5 * lam,
                                             self.eps_mol)
            if self._verify_gradient_margin():
                break
            lam *= 0.5
        else:
            raise QPFailure(f"could not certify gradient margin at {x}")
        self.zeta = zeta_for_band(self.lam)
        self.anchor = self.lam * (self.R / 2.0) * self.q
        self.theta = self._theta

    def _domain_cone_gap(self, x, n_dirs: int = 4096) -> float:
        rng = np.random.default_rng(20240517)
        J = self.domain.dimension
        W = rng.standard_normal((n_dirs, J))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        feas = np.all(W @ self.normals.T >= 0.0, axis=1)
        cand = [W[feas]] if feas.any() else []
        # structured directions: normals, gammas, and their positive sums
        extra = [self.normals.sum(axis=0), *self.normals, *self.gammas]
        E = np.array([e / np.linalg.norm(e) for e in extra
                      if np.linalg.norm(e) > 0 and np.all(self.normals @ e >= -1e-12)])
        if len(E):
            cand.append(E)
        if not cand:
            raise SamplingFailure("no directions inside the local domain cone")
        W = np.vstack(cand)
        return float(np.min(self.cone.distance(W)))

    def _verify_gradient_margin(self) -> bool:
        rng = np.random.default_rng(99)
        J = self.domain.dimension
        Z = rng.standard_normal((600, J))
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
        Z = Z * rng.uniform(0.2, 2.5, size=(600, 1))
        d = self.cone.distance(Z)
        band = (d > self.eta) & (d < 2.5 * self.lam)
        if band.sum() < 20:
            return False
        G = self.mol.gradient(Z[band])
        inner = G @ self.gammas.T
        self._theta = float(np.min(inner))
        return self._theta > 0.25 * self.margin

    def r_cap(self, x) -> float:
        """Largest admissible bump radius at a stratum point."""
        x = np.asarray(x, dtype=float)
        cap = np.inf
        for i, p in enumerate(self.domain.pieces):
            if i in self.idx:
                continue
            if p.kind == "half-space":
                cap = min(cap, abs(p.value(x)))
            else:
                y = dom.project_to_piece(self.domain, i, x)
                cap = min(cap, float(np.linalg.norm(y - x)))
        for sp in self.domain.singular_points:
            cap = min(cap, float(np.linalg.norm(sp.x - x)))
        return 0.99 * cap

    def bump_constants(self):
        """Scale-invariant plateau radius and bound triple of a unit bump.

        The bump at radius r is a function of (y - x)/r alone, so the plateau
        fraction and the (sup, sup r, sup r^2) bounds are shared by the whole
        stratum.
        """
        if hasattr(self, "_bump_constants"):
            return self._bump_constants
        J = self.domain.dimension
        zeta, mol, anchor = self.zeta, self.mol, self.anchor
        dirs = _unit_directions(J, 40)
        lo_d, hi_d = 0.0, 0.6
        for _ in range(30):
            mid = 0.5 * (lo_d + hi_d)
            k = mol.value(mid * dirs + anchor)
            if np.all(k <= 1.25 * self.lam):
                lo_d = mid
            else:
                hi_d = mid
        plateau_unit = lo_d

        probes = _ball_samples(J, 300) + anchor
        kv = mol.value(probes)
        s1 = zeta.d1(kv)
        s2 = zeta.d2(kv)
        G = mol.gradient(probes)
        H = mol.hessian(probes)
        sup_v = float(np.max(np.abs(zeta.value(kv))))
        grads = s1[:, None] * G
        hess = (s2[:, None, None] * np.einsum("ni,nj->nij", G, G)
                + s1[:, None, None] * H)
        sup_g = float(np.max(np.linalg.norm(grads, axis=1)))
        sup_h = float(np.max(np.sum(np.abs(hess), axis=(1, 2))))
        A = 1.2 * max(1.0, sup_v, sup_g, sup_h)
        self._bump_constants = (plateau_unit, A)
        return self._bump_constants


def _stratum_model(domain: dom.DomainSpec, x) -> StratumModel:
    constant = all(p.kind == "half-space" and not callable(p._gamma)
                   for p in domain.pieces)
    if not constant:
        return StratumModel(domain, x)
    cache = getattr(domain, "_stratum_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(domain, "_stratum_cache", cache)
    key = tuple(dom.active_set(domain, x))
    if key not in cache:
        cache[key] = StratumModel(domain, x)
    return cache[key]


def boundary_bump(domain: dom.DomainSpec, x, r: float,
                  model: Optional[StratumModel] = None) -> TestFunction:
    """Plateau bump at a nonsingular boundary point.

    One near the point, zero outside the r-ball, with the boundary sign
    condition exact by construction: the gradient is a nonpositive multiple
    of a field whose inner product with every active reflection vector is
    certified positive.
    """
    x = np.asarray(x, dtype=float)
    if model is None:
        model = _stratum_model(domain, x)
    cap = model.r_cap(x)
    if not 0.0 < r <= cap:
        raise RadiusTooLarge(f"need r in (0, {cap:.3g}] at {x}, got {r}")
    J = domain.dimension
    mol, zeta, anchor = model.mol, model.zeta, model.anchor

    def _z(Y):
        return (Y - x) / r + anchor

    def value(Y):
        out = zeta.value(mol.value(_z(Y)))
        out[np.linalg.norm(Y - x, axis=1) >= r] = 0.0
        return out

    def gradient(Y):
        Z = _z(Y)
        k = mol.value(Z)
        s = zeta.d1(k)
        out = np.zeros_like(Y)
        act = s != 0.0
        if act.any():
            out[act] = (s[act][:, None] / r) * mol.gradient(Z[act])
        out[np.linalg.norm(Y - x, axis=1) >= r] = 0.0
        return out

    def hessian(Y):
        Z = _z(Y)
        k = mol.value(Z)
        s1 = zeta.d1(k)
        s2 = zeta.d2(k)
        out = np.zeros((len(Y), J, J))
        act = (s1 != 0.0) | (s2 != 0.0)
        if act.any():
            G = mol.gradient(Z[act])
            H = mol.hessian(Z[act])
            out[act] = (s2[act][:, None, None] * np.einsum("ni,nj->nij", G, G)
                        + s1[act][:, None, None] * H) / (r * r)
        out[np.linalg.norm(Y - x, axis=1) >= r] = 0.0
        return out

    plateau_unit, A = model.bump_constants()
    d_plateau = plateau_unit * r
    return TestFunction(
        J, value, gradient, hessian, center=x, support_radius=r,
        constant_outside=0.0, claims_in_class=True, claims_negated_in_class=False,
        bound_triple=(A, A / r, A / (r * r)),
        info={"kind": "boundary", "r": r, "stratum": model.idx,
              "plateau_radius": d_plateau, "lam": model.lam,
              "beta": model.beta, "theta": model.theta,
              "delta_fat": model.delta})


def _unit_directions(J, n, seed=3):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n, J))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    return W


def _ball_samples(J, n, seed=4):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n, J))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    rad = rng.uniform(0, 1, size=(n, 1)) ** (1.0 / J)
    return W * rad


# ---------------------------------------------------------------------------
# Admissibility check
# ---------------------------------------------------------------------------

@dataclass
class AdmissibilityReport:
    worst_boundary_inner: float
    worst_singular_variation: float
    worst_outside_variation: float
    samples: int
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return (self.worst_boundary_inner <= self.tol
                and self.worst_singular_variation <= self.tol
                and self.worst_outside_variation <= self.tol)


def check_admissible(f: TestFunction, domain: dom.DomainSpec, samples: int = 2000,
                     seed: int = 0, tol: float = 1e-9) -> AdmissibilityReport:
    """Sampled verification of membership in the admissible test class.

    Checks the boundary sign condition <gamma_i(y), grad f(y)> <= tol at
    active pieces, constancy of f near every singular point, and constancy
    outside the declared support.
    """
    center = f.center if f.center is not None and np.isfinite(f.support_radius) else None
    radius = 1.25 * f.support_radius if center is not None else None
    try:
        B = dom.sample_boundary(domain, samples, seed=seed, center=center, radius=radius)
    except SamplingFailure:
        B = dom.sample_boundary(domain, samples, seed=seed)
    worst = -np.inf
    for y in B:
        try:
            idx = dom.active_set(domain, y, tol=10 * domain.tol_at(y))
        except dom.EmptyActiveSet:
            continue
        g = f.gradient(y)
        for i in idx:
            worst = max(worst, float(np.dot(domain.pieces[i].gamma(y), g)))
    worst = worst if np.isfinite(worst) else 0.0

    sing = 0.0
    for sp in domain.singular_points:
        ball = sp.x[None, :] + 1e-7 * _ball_samples(domain.dimension, 50)
        v0 = f.value(sp.x)
        vals = f._value(ball)
        sing = max(sing, float(np.max(np.abs(vals - v0))))

    out_var = 0.0
    if f.center is not None and np.isfinite(f.support_radius):
        far = []
        try:
            pts = dom.sample_closure(domain, samples // 2, seed=seed + 1)
            mask = np.linalg.norm(pts - f.center, axis=1) > f.support_radius * (1 + 1e-9)
            far = pts[mask]
        except SamplingFailure:
            far = []
        if len(far):
            vals = f._value(np.asarray(far))
            out_var = float(np.max(np.abs(vals - f.constant_outside)))
    return AdmissibilityReport(worst, sing, out_var, samples, tol)


# ---------------------------------------------------------------------------
# Cover family (separation test functions)
# ---------------------------------------------------------------------------

@dataclass
class _LatticeBump:
    x: np.ndarray
    kind: str
    r: float
    plateau: float
    func: TestFunction
    l_bound: float = 0.0


class CoverFamily:
    """Family {f_x : x in the ball of radius N} of separation test functions.

    Each member is a finite sum of admissible bumps vanishing on an eps/2
    ball around its query point and exceeding one half beyond 3 eps, with a
    reported uniform bound on the generator applied to any member.
    """

    def __init__(self, domain, coefficients, N, eps, bumps, centers, c_const, C_bound):
        self.domain = domain
        self.coefficients = coefficients
        self.N = N
        self.eps = eps
        self.bumps = bumps
        self.centers = centers
        self.c = c_const
        self.C = C_bound

    def center_index(self, x) -> int:
        x = np.asarray(x, dtype=float)
        d = np.linalg.norm(self.centers - x, axis=1)
        hits = np.flatnonzero(d < self.eps / 2.0)
        if len(hits):
            return int(hits[0])          # smallest index tie-break
        return int(np.argmin(d))

    def member(self, x) -> TestFunction:
        z = self.centers[self.center_index(x)]
        sel = [b.func for b in self.bumps
               if np.linalg.norm(b.x - z) >= 2.0 * self.eps]
        f = combine(sel)
        f.info.update(kind="cover-member", z=z, eps=self.eps)
        return f

    def precompute(self, Y, coefficients=None) -> "FamilyEvaluation":
        """Batch-evaluate every bump once on Y for fast member sums."""
        return FamilyEvaluation(self, Y, coefficients or self.coefficients)

    def manifest(self) -> dict:
        return {
            "N": self.N,
            "eps": self.eps,
            "c": self.c,
            "C": self.C,
            "centers": [list(map(float, z)) for z in self.centers],
            "bumps": [{"x": list(map(float, b.x)), "kind": b.kind,
                       "r": b.r, "plateau": b.plateau} for b in self.bumps],
        }


class FamilyEvaluation:
    """All bumps of a cover family evaluated on a fixed point batch.

    Every member is the full bump sum minus the bumps within 2 eps of its
    cover center, so member values/gradients/generator-values reduce to a
    handful of sparse corrections on top of shared totals.
    """

    def __init__(self, family: CoverFamily, Y, coefficients):
        self.family = family
        self.Y = np.atleast_2d(np.asarray(Y, dtype=float))
        n, J = self.Y.shape
        self.full_value = np.zeros(n)
        self.full_grad = np.zeros((n, J))
        self.full_lf = np.zeros(n)
        self._idx, self._vals, self._grads, self._lfs = [], [], [], []
        if coefficients is not None and getattr(coefficients, "is_constant", False):
            b0 = coefficients.b(np.zeros(J))
            a0 = coefficients.a(np.zeros(J))
        else:
            b0 = a0 = None
        for bump in family.bumps:
            mask = np.linalg.norm(self.Y - bump.x, axis=1) \
                <= bump.func.support_radius * (1 + 1e-12)
            idx = np.flatnonzero(mask)
            if len(idx) == 0:
                self._idx.append(idx)
                self._vals.append(np.empty(0))
                self._grads.append(np.empty((0, J)))
                self._lfs.append(np.empty(0))
                continue
            pts = self.Y[idx]
            v = bump.func._value(pts)
            g = bump.func._gradient(pts)
            H = bump.func._hessian(pts)
            if b0 is not None:
                lf = g @ b0 + 0.5 * np.einsum("nij,ij->n", H, a0)
            else:
                lf = np.array([
                    float(np.dot(coefficients.b(x), gi)
                          + 0.5 * np.sum(coefficients.a(x) * Hi))
                    for x, gi, Hi in zip(pts, g, H)])
            self._idx.append(idx)
            self._vals.append(v)
            self._grads.append(g)
            self._lfs.append(lf)
            self.full_value[idx] += v
            self.full_grad[idx] += g
            self.full_lf[idx] += lf

    def _corrections(self, z):
        z = np.asarray(z, dtype=float)
        return [k for k, b in enumerate(self.family.bumps)
                if np.linalg.norm(b.x - z) < 2.0 * self.family.eps]

    def member_arrays(self, x):
        """(value, gradient, generator value) arrays of the member at x."""
        z = self.family.centers[self.family.center_index(x)]
        v = self.full_value.copy()
        g = self.full_grad.copy()
        lf = self.full_lf.copy()
        for k in self._corrections(z):
            v[self._idx[k]] -= self._vals[k]
            g[self._idx[k]] -= self._grads[k]
            lf[self._idx[k]] -= self._lfs[k]
        return v, g, lf


def _lattice_points(lo, hi, spacing):
    axes = [np.arange(l, h + spacing / 2, spacing) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _add_interior(domain, bumps, x, eps, depth=None):
    d = dom.distance_to_boundary(domain, x) if depth is None else depth
    rho = 0.95 * min(eps, d)
    if rho <= eps * 1e-3:
        return False
    f = interior_bump(domain, x, rho ** 2)
    bumps.append(_LatticeBump(np.asarray(x, float), "interior", rho ** 2,
                              rho / 2.0, f))
    return True


def _add_boundary(domain, bumps, x, eps):
    try:
        model = _stratum_model(domain, x)
    except (NotInU, QPFailure):
        return None
    r = min(eps, model.r_cap(x))
    if r <= eps * 1e-3:
        return None
    f = boundary_bump(domain, x, r, model=model)
    lb = _LatticeBump(np.asarray(x, float), "boundary", r,
                      f.info["plateau_radius"], f)
    bumps.append(lb)
    return lb


def assemble_cover_family(domain: dom.DomainSpec, coefficients, N: float,
                          eps: float, verify_cover: bool = True,
                          seed: int = 0, obligations: int = 3000,
                          max_repair_rounds: int = 60) -> CoverFamily:
    """Build the separation family on the N-ball for scale eps.

    Bumps are laid out in three passes: singular-point bumps, per-stratum
    boundary lattices (deepest strata first, graded toward the singular set),
    and a deep interior lattice; a greedy repair loop then inserts bumps at
    sampled points not yet inside any plateau until the region of interest is
    fully covered.
    """
    polyhedral = all(p.kind == "half-space" and not callable(p._gamma)
                     for p in domain.pieces)
    if not (polyhedral or domain.bounded
            or getattr(domain, "allow_curved_family", False)):
        raise UnboundedUnsupported(
            "family assembly needs a polyhedral constant-reflection or bounded domain")
    J = domain.dimension
    reach = N + 3.5 * eps
    lo = np.maximum(domain.bbox[0], -reach * np.ones(J))
    hi = np.minimum(domain.bbox[1], reach * np.ones(J))

    bumps: list = []
    for sp in domain.singular_points:
        r = min(eps, 0.999 * sp.radius) / sp.c2
        f = singular_bump(domain, sp, r)
        bumps.append(_LatticeBump(sp.x, "singular", r,
                                  f.info["plateau_radius"], f))

    strata = []
    if polyhedral:
        from itertools import combinations
        m = len(domain.pieces)
        for size in range(m, 0, -1):
            for subset in combinations(range(m), size):
                if _stratum_is_singular(domain, subset):
                    continue
                rep = dom._stratum_representative(domain, set(subset))
                if rep is None:
                    continue
                strata.append((subset, rep))
    else:
        for i in range(len(domain.pieces)):
            strata.append(((i,), None))

    guard = [sp.x for sp in domain.singular_points]
    for subset, rep in sorted(strata, key=lambda t: -len(t[0])):
        pts = _stratum_lattice(domain, subset, lo, hi, eps, guard, eps)
        if pts is None or not len(pts):
            continue
        for x in pts:
            _add_boundary(domain, bumps, x, eps)

    # interior lattices: a deep coarse lattice plus graded shell bands whose
    # spacing tracks the local plateau scale (overlapping in depth; the
    # repair pass below guarantees the残 coverage)
    polyhedral_exact_depth = polyhedral

    def depths_of(P):
        if polyhedral_exact_depth:
            return np.min(domain.piece_values_batch(P), axis=1)
        return np.array([dom.distance_to_boundary(domain, x) for x in P])

    spacing = 0.85 * eps / math.sqrt(J)
    deep = _lattice_points(lo, hi, spacing)
    deep = deep[np.linalg.norm(deep, axis=1) <= reach]
    dd = depths_of(deep)
    for x, d in zip(deep[dd >= eps], dd[dd >= eps]):
        _add_interior(domain, bumps, x, eps, depth=d)

    face_plateau = max([b.plateau for b in bumps if b.kind == "boundary"],
                       default=0.27 * eps)
    t = max(0.75 * face_plateau, eps / 24.0)
    bands = []
    while t < eps:
        bands.append(t)
        t *= 1.8
    for t_lo_band, t_hi_band in zip(bands, bands[1:] + [eps * 1.01]):
        s_k = max(0.855 * min(eps, t_lo_band) / math.sqrt(J), eps / 200.0)
        P = _lattice_points(lo, hi, s_k)
        P = P[np.linalg.norm(P, axis=1) <= reach]
        dP = depths_of(P)
        keep = (dP >= 0.7 * t_lo_band) & (dP < 1.3 * t_hi_band)
        for x, d in zip(P[keep], dP[keep]):
            _add_interior(domain, bumps, x, eps, depth=d)

    # coverage obligations: volume and boundary samples inside the reach ball
    vol = dom.sample_closure(domain, obligations, seed=seed + 5)
    try:
        bnd = dom.sample_boundary(domain, obligations // 3, seed=seed + 6)
        probes = np.vstack([vol, bnd])
    except SamplingFailure:
        probes = vol
    probes = probes[np.linalg.norm(probes, axis=1) <= reach]

    def plateau_mask(points, blist):
        cov = np.zeros(len(points), dtype=bool)
        for b in blist:
            near = np.linalg.norm(points - b.x, axis=1) <= b.plateau * (1 - 1e-12)
            if near.any():
                cov[near] |= b.func._value(points[near]) >= 1.0 - 1e-12
        return cov

    covered = plateau_mask(probes, bumps)
    for _ in range(max_repair_rounds):
        if covered.all():
            break
        uncov_idx = np.flatnonzero(~covered)
        depths = np.array([dom.distance_to_boundary(domain, probes[i])
                           for i in uncov_idx])
        order = uncov_idx[np.argsort(-depths)]
        new_bumps = []
        blocked = np.zeros(len(probes), dtype=bool)
        for i in order[:400]:
            if covered[i] or blocked[i]:
                continue
            y = probes[i]
            d = dom.distance_to_boundary(domain, y)
            added = None
            if d > 0.25 * eps and _add_interior(domain, bumps, y, eps, depth=d):
                added = bumps[-1]
            if added is None:
                # bump the nearby strata, accepting only a bump whose plateau
                # actually contains the gap point
                vals = domain.piece_values(y)
                near = [int(k) for k in np.argsort(vals)[:2]]
                for sub in ([tuple(sorted(near))] if len(near) > 1 else []) + \
                        [(k,) for k in near]:
                    xq = _project_to_stratum(domain, sub, y)
                    if xq is None:
                        continue
                    lb = _add_boundary(domain, bumps, xq, eps)
                    if lb is None:
                        continue
                    if (np.linalg.norm(y - lb.x) <= lb.plateau
                            and lb.func.value(y) >= 1.0 - 1e-12):
                        added = lb
                        break
                    bumps.pop()
            if added is None and d > 0.02 * eps \
                    and _add_interior(domain, bumps, y, eps, depth=d):
                added = bumps[-1]
            if added is None:
                blocked[i] = True
                continue
            new_bumps.append(added)
            near = np.linalg.norm(probes - added.x, axis=1) <= added.plateau
            if near.any():
                covered[near] |= added.func._value(probes[near]) >= 1.0 - 1e-12
    if verify_cover and not covered.all():
        missing = probes[~covered][:5]
        raise SamplingFailure(
            f"cover gap at {len(probes) - covered.sum()} sample points, "
            f"e.g. {missing}")

    # cover centers: eps/2 cover of the N ball, lexicographic order
    sz = eps / (2.0 * math.sqrt(J))
    zc = _lattice_points(np.maximum(lo, -(N + eps) * np.ones(J)),
                         np.minimum(hi, (N + eps) * np.ones(J)), sz)
    zc = zc[np.linalg.norm(zc, axis=1) <= N + sz * math.sqrt(J)]
    centers = []
    for z in zc:
        cls, vals = dom.contains(domain, z)
        if cls == dom.EXTERIOR:
            if np.min(vals) < -sz * math.sqrt(J):
                continue
            z = _project_into(domain, z)
        centers.append(z)
    if not centers:
        raise SamplingFailure("no cover centers inside the domain")
    centers = np.array(centers)

    # uniform generator bound: per-bump certified bound times sampled overlap
    B_pts = dom.sample_closure(domain, 400, seed=seed + 9)
    sup_b = max(float(np.linalg.norm(coefficients.b(y))) for y in B_pts)
    sup_a = max(float(np.max(np.abs(coefficients.a(y)))) for y in B_pts)
    for b in bumps:
        A0, A1, A2 = b.func.bound_triple or (1.0, 1.0 / b.r, 1.0 / b.r ** 2)
        b.l_bound = sup_b * A1 + 0.5 * sup_a * A2
    centers_arr = np.stack([b.x for b in bumps])
    radii = np.array([b.func.support_radius for b in bumps])
    lb = np.array([b.l_bound for b in bumps])
    overlap = 0.0
    for y in np.vstack([B_pts, probes[:400]]):
        mask = np.linalg.norm(centers_arr - y, axis=1) <= radii
        overlap = max(overlap, float(np.sum(lb[mask])))
    C_bound = 1.5 * overlap + 1.0
    return CoverFamily(domain, coefficients, N, eps, bumps, centers, 0.5, C_bound)


def _project_to_stratum(domain, subset, y):
    """Orthogonal projection of y onto a polyhedral stratum, if feasible."""
    pieces = [domain.pieces[i] for i in subset]
    if any(p.kind != "half-space" for p in pieces):
        x = dom.project_to_piece(domain, subset[0], y)
        return x if np.all(domain.piece_values(x) >= -1e-9) else None
    Nmat = np.stack([p.normal for p in pieces])
    offs = np.array([p.offset for p in pieces])
    sol, *_ = np.linalg.lstsq(Nmat.T @ Nmat + 1e-14 * np.eye(domain.dimension),
                              Nmat.T @ (offs - Nmat @ y), rcond=None)
    x = y + sol
    vals = domain.piece_values(x)
    ok = all(abs(vals[i]) <= 1e-7 if i in subset else vals[i] >= -1e-9
             for i in range(len(vals)))
    return x if ok else None


def _stratum_is_singular(domain, subset) -> bool:
    rep = dom._stratum_representative(domain, set(subset))
    if rep is None:
        return True
    return any(np.linalg.norm(rep - sp.x) < 1e-9 for sp in domain.singular_points)


def _project_into(domain, z):
    vals = domain.piece_values(z)
    for i in np.argsort(vals):
        if vals[i] >= 0:
            break
        z = dom.project_to_piece(domain, int(i), z)
        vals = domain.piece_values(z)
    return z


def _stratum_lattice(domain, subset, lo, hi, eps, guard_points, plateau_lower):
    """Lattice on one polyhedral boundary stratum, graded away from guards."""
    pieces = [domain.pieces[i] for i in subset]
    if any(p.kind != "half-space" for p in pieces):
        return _curved_stratum_lattice(domain, subset, eps, plateau_lower)
    J = domain.dimension
    Nmat = np.stack([p.normal for p in pieces])
    offs = np.array([p.offset for p in pieces])
    x0, *_ = np.linalg.lstsq(Nmat, offs, rcond=None)
    # tangent basis of the stratum
    _, s, Vt = np.linalg.svd(Nmat)
    rank = int(np.sum(s > 1e-10))
    T = Vt[rank:]
    d = len(T)
    if d == 0:
        return np.array([x0]) if np.all(
            domain.piece_values(x0) >= -1e-9) else None
    # graded 1D grids along each tangent direction based on guard distance
    base = 0.35 * eps
    axes = []
    for t in T:
        lo_t = float(np.dot(np.where(t > 0, lo, hi) - x0, t))
        hi_t = float(np.dot(np.where(t > 0, hi, lo) - x0, t))
        lo_t, hi_t = min(lo_t, hi_t), max(hi_t, lo_t)
        axes.append(_graded_axis(lo_t, hi_t, base))
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    pts = x0[None, :] + coords @ T
    vals = domain.piece_values_batch(pts)
    keep = np.ones(len(pts), dtype=bool)
    for col in range(vals.shape[1]):
        if col in subset:
            keep &= np.abs(vals[:, col]) <= 1e-7
        else:
            keep &= vals[:, col] >= -1e-9
    pts = pts[keep]
    if guard_points is not None and len(guard_points):
        Gp = np.asarray(guard_points)
        dmin = np.min(np.linalg.norm(pts[:, None, :] - Gp[None, :, :], axis=2),
                      axis=1)
        pts = pts[dmin >= max(plateau_lower * 0.45, 1e-6)]
    # refine near strata of deeper codimension: add graded sublattices
    return pts


def _graded_axis(lo_t, hi_t, base):
    """Grid points over [lo_t, hi_t] with spacing base, refined near zero."""
    pts = list(np.arange(lo_t, hi_t + base / 2, base))
    # geometric refinement toward coordinate zero when the interval touches it
    if lo_t <= 0.0 <= hi_t:
        step = base / 2
        while step > base / 64:
            pts.extend([p for p in (step, -step) if lo_t <= p <= hi_t])
            step /= 2
        pts.append(0.0)
    return np.unique(np.round(np.array(pts), 12))


def _curved_stratum_lattice(domain, subset, eps, plateau_lower):
    i = subset[0]
    try:
        pts, _ = dom.boundary_quadrature(domain, i, max(8, int(4.0 / eps)))
    except Exception:
        return None
    return pts
