"""Polyhedral convex cones: exact projection/distance and mollified distance.

Cones are given by finite generator sets (conic hulls).  Distances are exact:
in 1D/2D/3D the face structure is enumerated and evaluation is vectorized
over query points; higher dimensions fall back to per-point NNLS.

The mollified field averages the exact distance over a fixed quadrature
stencil of a compactly supported radial C^2 kernel; derivatives are central
finite differences of the smoothed field with step = kernel width / 8.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog, nnls

from .errors import BandEmpty, QPFailure


class PolyCone:
    """Pointed polyhedral convex cone spanned by finitely many generators."""

    def __init__(self, generators):
        G = np.atleast_2d(np.asarray(generators, dtype=float))
        norms = np.linalg.norm(G, axis=1)
        G = G[norms > 1e-14]
        if len(G) == 0:
            raise ValueError("cone needs at least one nonzero generator")
        self.generators = G
        self.dim = G.shape[1]
        self._build()

    # -- structure -----------------------------------------------------------
    def _build(self):
        G = self.generators
        J = self.dim
        # pointedness certificate: c with <c, g> >= |g| for all generators
        res = linprog(np.zeros(J),
                      A_ub=-G, b_ub=-np.linalg.norm(G, axis=1),
                      bounds=[(None, None)] * J, method="highs")
        if not res.success:
            raise QPFailure("cone is not pointed (no strictly positive functional)")
        self.axis = res.x / np.linalg.norm(res.x)

        if J == 1:
            self.rays = np.array([[1.0 if G[0, 0] > 0 else -1.0]])
            self.facets = []
            return
        # cross-section coordinates in the hyperplane <axis, y> = 1
        scale = G @ self.axis
        Q = G / scale[:, None]
        T = _hyperplane_basis(self.axis)
        P = (Q - self.axis[None, :]) @ T.T          # (m, J-1)
        if J == 2:
            order = np.argsort(P[:, 0])
            ray_idx = [order[0], order[-1]]
            if abs(P[order[0], 0] - P[order[-1], 0]) < 1e-13:
                ray_idx = [order[0]]
            self.rays = np.array([G[i] / np.linalg.norm(G[i]) for i in ray_idx])
            self.facets = [(i,) for i in range(len(self.rays))]
            if len(self.rays) == 2:
                # outward normals of the two bounding half-planes
                normals = []
                for r in self.rays:
                    nrm = np.array([-r[1], r[0]])
                    if np.mean(self.generators @ nrm) > 0:
                        nrm = -nrm
                    normals.append(nrm)
                self._facet_normals = np.array(normals)
            else:
                self._facet_normals = None
            return
        if J == 3:
            from scipy.spatial import ConvexHull
            if len(P) < 3 or np.linalg.matrix_rank(P - P[0]) < 2:
                # generators span a 2D wedge inside a plane; treat every
                # generator pair as a candidate facet and every generator as a ray
                self.rays = G / np.linalg.norm(G, axis=1)[:, None]
                self.facets = [(i, j) for i in range(len(G)) for j in range(i + 1, len(G))]
                self._facet_normals = None
                return
            hull = ConvexHull(P)
            vidx = hull.vertices
            self.rays = np.array([G[i] / np.linalg.norm(G[i]) for i in vidx])
            nv = len(vidx)
            pos = {v: k for k, v in enumerate(vidx)}
            self.facets = []
            normals = []
            for simplex in hull.simplices:
                i, j = simplex
                ri, rj = G[i], G[j]
                nu = np.cross(ri, rj)
                if np.linalg.norm(nu) < 1e-14:
                    continue
                nu = nu / np.linalg.norm(nu)
                if np.max(self.generators @ nu) > 1e-10:
                    nu = -nu
                self.facets.append((pos[i], pos[j]))
                normals.append(nu)
            self._facet_normals = np.array(normals)
            return
        # J >= 4: exact structure not enumerated; NNLS fallback at evaluation
        self.rays = G / np.linalg.norm(G, axis=1)[:, None]
        self.facets = None
        self._facet_normals = None

    def contains(self, Z, tol: float = 1e-10) -> np.ndarray:
        """Boolean membership for rows of Z (distance-based, robust)."""
        return self.distance(Z) <= tol

    # -- distance --------------------------------------------------------------
    def project_info(self, Z):
        """Projection plus the projector onto the active face's linear span.

        Returns (proj (n,J), A (n,J,J)); off the normal-fan ridges the
        distance is locally |(I - A) z|, which gives exact derivatives.
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        J = self.dim
        n = len(Z)
        if J >= 4 or (J == 3 and self.facets is None):
            return self._project_nnls(Z)
        if J == 1:
            r = self.rays[0, 0]
            t = np.maximum(0.0, Z[:, 0] * r)
            proj = (t * r)[:, None]
            A = np.zeros((n, 1, 1))
            A[t > 0] = 1.0
            return proj, A

        best = np.zeros_like(Z)                       # vertex candidate
        best_d2 = np.einsum("ij,ij->i", Z, Z)
        best_A = np.zeros((n, J, J))

        # ray candidates
        for r in self.rays:
            t = np.maximum(0.0, Z @ r)
            cand = t[:, None] * r[None, :]
            d2 = np.einsum("ij,ij->i", Z - cand, Z - cand)
            upd = d2 < best_d2
            best[upd] = cand[upd]
            best_d2[upd] = d2[upd]
            best_A[upd] = np.outer(r, r)[None, :, :]

        if J == 3:
            # facet candidates (2D subcones spanned by adjacent rays)
            for (ki, kj) in self.facets:
                ri, rj = self.rays[ki], self.rays[kj]
                g11, g12, g22 = ri @ ri, ri @ rj, rj @ rj
                det = g11 * g22 - g12 * g12
                if abs(det) < 1e-14:
                    continue
                b1, b2 = Z @ ri, Z @ rj
                a1 = (g22 * b1 - g12 * b2) / det
                a2 = (g11 * b2 - g12 * b1) / det
                feas = (a1 >= -1e-12) & (a2 >= -1e-12)
                if not feas.any():
                    continue
                cand = a1[:, None] * ri[None, :] + a2[:, None] * rj[None, :]
                d2 = np.einsum("ij,ij->i", Z - cand, Z - cand)
                upd = feas & (d2 < best_d2)
                if upd.any():
                    B = np.linalg.qr(np.stack([ri, rj], axis=1))[0]
                    best[upd] = cand[upd]
                    best_d2[upd] = d2[upd]
                    best_A[upd] = (B @ B.T)[None, :, :]

        # interior of the full cone
        if self._facet_normals is not None and len(self._facet_normals):
            inside = np.all(Z @ self._facet_normals.T <= 1e-12, axis=1)
            best[inside] = Z[inside]
            best_A[inside] = np.eye(J)[None, :, :]
        return best, best_A

    def project(self, Z) -> np.ndarray:
        return self.project_info(Z)[0]

    def distance(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.linalg.norm(Z - self.project(Z), axis=1)

    def _project_nnls(self, Z):
        G = self.generators.T            # (J, m)
        J = self.dim
        out = np.empty_like(Z)
        A = np.zeros((len(Z), J, J))
        for k, z in enumerate(Z):
            coef, _ = nnls(G, z)
            out[k] = G @ coef
            act = coef > 1e-12
            if act.any():
                B = np.linalg.qr(G[:, act])[0]
                A[k] = B @ B.T
        return out, A


def _hyperplane_basis(n: np.ndarray) -> np.ndarray:
    """(J-1, J) orthonormal basis orthogonal to unit n."""
    J = len(n)
    out = []
    for k in range(J):
        e = np.zeros(J)
        e[k] = 1.0
        t = e - (e @ n) * n
        for b in out:
            t = t - (t @ b) * b
        nrm = np.linalg.norm(t)
        if nrm > 1e-10:
            out.append(t / nrm)
        if len(out) == J - 1:
            break
    return np.array(out)


def fattened_generators(base, delta: float) -> np.ndarray:
    """Generators of the conic hull of axis-fattened base vectors.

    The hull of {v +- delta e_k} contains the ball of radius delta/sqrt(J)
    around each base vector v, which is the margin used by gradient
    certificates of the mollified distance.
    """
    base = np.atleast_2d(np.asarray(base, dtype=float))
    J = base.shape[1]
    out = []
    for v in base:
        for k in range(J):
            e = np.zeros(J)
            e[k] = delta
            out.append(v + e)
            out.append(v - e)
    return np.array(out)


def _sphere_directions(J: int) -> np.ndarray:
    if J == 1:
        return np.array([[1.0], [-1.0]])
    if J == 2:
        th = np.linspace(0.0, 2 * np.pi, 16, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if J == 3:
        pts = []
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                for c in (-1, 0, 1):
                    if a == b == c == 0:
                        continue
                    v = np.array([a, b, c], dtype=float)
                    pts.append(v / np.linalg.norm(v))
        return np.array(pts)
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((4 * J * J, J))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class MollifiedConeDistance:
    """Smoothed distance field to a polyhedral cone on a band of distances.

    value(z) = sum_q W_q dist(z - w u_q, cone) for a fixed stencil {u_q, W_q}
    of the radial kernel psi(|u|) ~ (1 - |u|^2)^3 on the ball of radius w,
    with weights normalized to sum exactly to one.  eta < dist < lam is the
    band on which the approximation and Hessian bounds are certified.
    """

    cone: PolyCone
    eta: float
    lam: float
    eps: float
    width: Optional[float] = None

    def __post_init__(self):
        if not (0 < self.eta < self.lam):
            raise BandEmpty(f"need 0 < eta < lam, got {self.eta}, {self.lam}")
        if self.width is None:
            self.width = min(self.eta / 4.0, self.eps / 2.0)
        J = self.cone.dim
        # radial Gauss nodes on [0,1] against rho^(J-1) psi(rho)
        xs, ws = np.polynomial.legendre.leggauss(5)
        rho = 0.5 * (xs + 1.0)
        wr = 0.5 * ws
        psi = (1.0 - rho ** 2) ** 3
        dirs = _sphere_directions(J)
        nodes, weights = [], []
        for r, wrad in zip(rho, wr):
            for d in dirs:
                nodes.append(r * d)
                weights.append(wrad * (r ** (J - 1)) * ((1.0 - r * r) ** 3))
        self._nodes = np.array(nodes) * self.width
        w = np.array(weights)
        self._weights = w / w.sum()
        self._fd_step = self.width / 8.0

    # -- evaluation ------------------------------------------------------------
    def _node_data(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        n, J = Z.shape
        q = len(self._nodes)
        shifted = (Z[:, None, :] - self._nodes[None, :, :]).reshape(n * q, J)
        proj, A = self.cone.project_info(shifted)
        w = shifted - proj
        d = np.linalg.norm(w, axis=1)
        return n, q, J, w, d, A

    def value(self, Z) -> np.ndarray:
        n, q, J, w, d, A = self._node_data(Z)
        return d.reshape(n, q) @ self._weights

    def gradient(self, Z) -> np.ndarray:
        """Exact gradient: stencil average of (z' - proj z') / dist."""
        n, q, J, w, d, A = self._node_data(Z)
        safe = np.maximum(d, 1e-300)
        g = np.where(d[:, None] > 1e-12, w / safe[:, None], 0.0)
        return np.einsum("nqj,q->nj", g.reshape(n, q, J), self._weights)

    def hessian(self, Z) -> np.ndarray:
        """Exact a.e. Hessian: stencil average of (I - A - gg') / dist."""
        n, q, J, w, d, A = self._node_data(Z)
        safe = np.maximum(d, 1e-300)
        g = w / safe[:, None]
        H = (np.eye(J)[None, :, :] - A - np.einsum("ni,nj->nij", g, g)) \
            / safe[:, None, None]
        H = np.where((d > 1e-12)[:, None, None], H, 0.0)
        return np.einsum("nqij,q->nij", H.reshape(n, q, J, J), self._weights)

    def band_mask(self, Z) -> np.ndarray:
        d = self.cone.distance(Z)
        return (d > self.eta) & (d < self.lam)

    def gradient_margin(self, Z, probe_vectors) -> float:
        """max over band points and probes of <grad l, p>; negative certifies
        the uniform descent property against all probe vectors."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        mask = self.band_mask(Z)
        if not mask.any():
            raise BandEmpty("no query points inside the band")
        G = self.gradient(Z[mask])
        P = np.atleast_2d(np.asarray(probe_vectors, dtype=float))
        return float(np.max(G @ P.T))
