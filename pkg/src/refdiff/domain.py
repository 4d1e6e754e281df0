"""Domains as intersections of boundary pieces with oblique reflection fields.

A domain G is the intersection of pieces G_i, each either a half-space
{<n_i, x> > c_i} or a smooth set {phi_i > 0}.  Each piece carries a
reflection field gamma_i normalized so that <n_i(x), gamma_i(x)> = 1 on the
piece.  A finite list of singular boundary points (where the reflection cone
degenerates) is part of the problem data; each such point carries the
certificate data used by the admissibility checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    ChartMissing,
    EmptyActiveSet,
    LPFailure,
    ParallelNormals,
    SamplingFailure,
)

INTERIOR = "interior"
BOUNDARY = "boundary"
EXTERIOR = "exterior"

# Registry of named boundary charts for curved pieces, so domains with smooth
# pieces can round-trip through JSON.  A chart factory maps params -> callable
# (resolution -> (points, weights)).
_CHART_REGISTRY: dict = {}


def register_chart(name: str, factory: Callable) -> None:
    _CHART_REGISTRY[name] = factory


def _as_unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        raise ValueError("zero vector cannot be normalized")
    return v / nrm


class BoundaryPiece:
    """One face of the domain: a half-space or a smooth sublevel piece.

    Half-space pieces store a unit inward normal and an offset; their signed
    value <n, x> - c is the signed distance to the face.  Smooth pieces store
    a defining function phi (positive inside) with a gradient evaluator, and
    optionally a chart used for boundary quadrature.

    The reflection field gamma may be a constant vector or a callable; it is
    rescaled at evaluation time so that <n(x), gamma(x)> = 1.
    """

    def __init__(self, kind, normal=None, offset=0.0, phi=None, grad_phi=None,
                 gamma=None, chart=None, name=None):
        if kind not in ("half-space", "smooth"):
            raise ValueError(f"unknown piece kind {kind!r}")
        self.kind = kind
        self.name = name
        self.chart = chart
        if kind == "half-space":
            if normal is None:
                raise ValueError("half-space piece needs a normal")
            n = np.asarray(normal, dtype=float)
            if abs(np.linalg.norm(n) - 1.0) > 1e-12:
                n = _as_unit(n)
            self.normal = n
            self.offset = float(offset)
            self.phi = None
            self.grad_phi = None
        else:
            if phi is None or grad_phi is None:
                raise ValueError("smooth piece needs phi and grad_phi")
            self.phi = phi
            self.grad_phi = grad_phi
            self.normal = None
            self.offset = None
        if gamma is None:
            raise ValueError("piece needs a reflection field gamma")
        self._gamma = gamma

    def value(self, x) -> float:
        """Signed piece value: positive inside, zero on the piece boundary."""
        x = np.asarray(x, dtype=float)
        if self.kind == "half-space":
            return float(np.dot(self.normal, x) - self.offset)
        return float(self.phi(x))

    def values(self, X) -> np.ndarray:
        """Vectorized signed values for an (n, J) array of points."""
        X = np.asarray(X, dtype=float)
        if self.kind == "half-space":
            return X @ self.normal - self.offset
        return np.asarray([self.phi(x) for x in X], dtype=float)

    def unit_normal(self, x) -> np.ndarray:
        """Unit inward normal at a point on (or near) the piece."""
        if self.kind == "half-space":
            return self.normal
        g = np.asarray(self.grad_phi(np.asarray(x, dtype=float)), dtype=float)
        return _as_unit(g)

    def gamma_raw(self, x) -> np.ndarray:
        g = self._gamma(np.asarray(x, dtype=float)) if callable(self._gamma) else self._gamma
        return np.asarray(g, dtype=float)

    def gamma(self, x) -> np.ndarray:
        """Reflection vector at x, rescaled so <n(x), gamma(x)> = 1."""
        g = self.gamma_raw(x)
        n = self.unit_normal(x)
        s = float(np.dot(n, g))
        if s <= 0.0:
            raise ValueError(
                f"reflection field has nonpositive normal component {s:.3e} at {x}"
            )
        return g / s

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "half-space":
            d["normal"] = list(map(float, self.normal))
            d["offset"] = self.offset
        else:
            if self.name is None:
                raise ChartMissing("smooth piece without a registered name cannot be serialized")
            d["phi_ref"] = self.name
        if callable(self._gamma):
            d["gamma"] = self.name if self.name else "callable"
        else:
            d["gamma"] = list(map(float, np.asarray(self._gamma, dtype=float)))
        return d


@dataclass
class SingularPoint:
    """A declared singular boundary point with its certificate data.

    v is the unit direction whose half-space contains all nearby reflection
    vectors; alpha bounds both the opening angle (<v, y-x> >= alpha |y-x|)
    and the diffusion ellipticity along v; radius bounds the certified
    neighborhood; c1 <= 1 < c2 are the sandwich constants of the two-sided
    ball inclusion (c1 = 1 is the borderline cone case; constructions that
    need strict slack replace it by a smaller certificate, which is always
    valid).
    """

    x: np.ndarray
    v: np.ndarray
    radius: float
    alpha: float
    c1: float
    c2: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-10:
            raise ValueError("singular-point direction must be a unit vector")
        if not (0 < self.c1 <= 1 < self.c2):
            raise ValueError("sandwich constants must satisfy 0 < c1 <= 1 < c2")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def h(self, y) -> np.ndarray:
        """Signed height <v, y - x> (vectorized over rows of y)."""
        y = np.asarray(y, dtype=float)
        return (y - self.x) @ self.v

    def to_json(self) -> dict:
        return {
            "x": list(map(float, self.x)),
            "v": list(map(float, self.v)),
            "r": float(self.radius),
            "alpha": float(self.alpha),
            "c1": float(self.c1),
            "c2": float(self.c2),
        }


@dataclass
class DomainSpec:
    """Intersection domain with reflection data and declared singular set."""

    dimension: int
    pieces: list
    singular_points: list = field(default_factory=list)
    bbox: Optional[tuple] = None
    well_posed: Optional[bool] = None
    bounded: bool = False
    active_tol: float = 1e-9

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("domain needs at least one boundary piece")
        if self.bbox is None:
            self.bbox = (-np.ones(self.dimension), np.ones(self.dimension))
        lo, hi = self.bbox
        self.bbox = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        for v in self.singular_points:
            cls, _ = contains(self, v.x)
            if cls == EXTERIOR:
                raise ValueError(f"declared singular point {v.x} lies outside the closed domain")

    def tol_at(self, x) -> float:
        return self.active_tol * (1.0 + float(np.linalg.norm(x)))

    def piece_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([p.value(x) for p in self.pieces])

    def piece_values_batch(self, X) -> np.ndarray:
        """(n, m) array of signed values for n points and m pieces."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([p.values(X) for p in self.pieces], axis=1)

    def min_value(self, x) -> float:
        return float(np.min(self.piece_values(x)))

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "pieces": [p.to_json() for p in self.pieces],
            "V": [v.to_json() for v in self.singular_points],
            "bbox": [list(map(float, self.bbox[0])), list(map(float, self.bbox[1]))],
            "well_posed": self.well_posed,
            "bounded": self.bounded,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def domain_from_json(d) -> DomainSpec:
    """Rebuild a domain from its JSON dict; smooth pieces resolve via the chart registry."""
    if isinstance(d, str):
        d = json.loads(d)
    pieces = []
    for pd in d["pieces"]:
        if pd["kind"] == "half-space":
            pieces.append(BoundaryPiece(
                "half-space", normal=pd["normal"], offset=pd["offset"], gamma=pd["gamma"]))
        else:
            ref = pd["phi_ref"]
            if ref not in _CHART_REGISTRY:
                raise ChartMissing(f"no registered builder for smooth piece {ref!r}")
            pieces.append(_CHART_REGISTRY[ref]())
    sing = [SingularPoint(v["x"], v["v"], v["r"], v["alpha"], v["c1"], v["c2"])
            for v in d.get("V", [])]
    return DomainSpec(
        dimension=d["dimension"], pieces=pieces, singular_points=sing,
        bbox=d.get("bbox"), well_posed=d.get("well_posed"),
        bounded=d.get("bounded", False))


# ---------------------------------------------------------------------------
# Point classification and cones
# ---------------------------------------------------------------------------

def contains(domain: DomainSpec, x):
    """Classify a point as interior / boundary / exterior.

    Returns (classification, per-piece signed values).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("point must be finite")
    vals = domain.piece_values(x)
    tol = domain.tol_at(x)
    m = float(np.min(vals))
    if m > tol:
        return INTERIOR, vals
    if m >= -tol:
        return BOUNDARY, vals
    return EXTERIOR, vals


def active_set(domain: DomainSpec, x, tol: Optional[float] = None) -> list:
    """Indices of pieces whose signed value vanishes at x (within tolerance)."""
    x = np.asarray(x, dtype=float)
    if tol is None:
        tol = domain.tol_at(x)
    vals = domain.piece_values(x)
    idx = [i for i, v in enumerate(vals) if abs(v) <= tol]
    if not idx:
        raise EmptyActiveSet(f"point {x} is not within {tol:.2e} of any piece")
    return idx


def direction_cone(domain: DomainSpec, x) -> list:
    """Generators {gamma_i(x) : i active at x} of the reflection cone."""
    idx = active_set(domain, x)
    return [domain.pieces[i].gamma(x) for i in idx]


def completely_s_at(domain: DomainSpec, x, tol: float = 1e-9):
    """Test whether some inward-normal combination makes a strictly positive
    inner product with every active reflection vector.

    Solves:  max t  over  s >= 0, sum s = 1,  <sum_i s_i n_i, gamma_j> >= t.
    Returns (ok, certificate normal or None, margin t*).
    """
    x = np.asarray(x, dtype=float)
    idx = active_set(domain, x)
    normals = np.stack([domain.pieces[i].unit_normal(x) for i in idx])
    gammas = np.stack([domain.pieces[i].gamma(x) for i in idx])
    k = len(idx)
    # variables: s_1..s_k, t;  minimize -t
    # constraints: -(N s) . gamma_j + t <= 0  for each j;  sum s = 1;  s >= 0
    G = gammas @ normals.T          # G[j, i] = <gamma_j, n_i>
    A_ub = np.hstack([-G, np.ones((k, 1))])
    b_ub = np.zeros(k)
    A_eq = np.hstack([np.ones((1, k)), np.zeros((1, 1))])
    b_eq = np.ones(1)
    c = np.zeros(k + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * k + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if not res.success:
        raise LPFailure(f"certificate LP failed at {x}: {res.message}")
    t_star = -res.fun
    ok = t_star > tol
    cert = None
    if ok:
        s = res.x[:k]
        cert = _as_unit(s @ normals)
    return ok, cert, t_star


@dataclass
class StratumResult:
    indices: tuple
    representative: np.ndarray
    passed: bool
    margin: float


@dataclass
class CompletelySReport:
    strata: list
    boundary_is_certified: bool

    def failing(self):
        return [s for s in self.strata if not s.passed]


def _stratum_representative(domain: DomainSpec, subset, margin_tol=1e-9):
    """A point with exactly the given active set, or None if the stratum is empty.

    For polyhedral domains: maximize the slack t of the inactive faces subject
    to the subset faces holding with equality, inside the bounding box.
    """
    m = len(domain.pieces)
    J = domain.dimension
    lo, hi = domain.bbox
    # variables: x (J), t
    c = np.zeros(J + 1)
    c[-1] = -1.0
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for i, p in enumerate(domain.pieces):
        if p.kind != "half-space":
            return None
        row = np.concatenate([p.normal, [0.0]])
        if i in subset:
            A_eq.append(row)
            b_eq.append(p.offset)
        else:
            # <n, x> - c >= t   ->  -<n, x> + t <= -c
            A_ub.append(np.concatenate([-p.normal, [1.0]]))
            b_ub.append(-p.offset)
    bounds = [(float(l), float(h)) for l, h in zip(lo, hi)] + [(None, 0.999)]
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None,
                  b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq) if A_eq else None,
                  b_eq=np.array(b_eq) if b_eq else None,
                  bounds=bounds, method="highs")
    if not res.success:
        return None
    t_star = -res.fun
    if t_star <= margin_tol:
        return None
    return res.x[:J]


def check_completely_s(domain: DomainSpec, curved_samples: int = 200,
                       seed: int = 0) -> CompletelySReport:
    """Sweep one representative point per nonempty boundary stratum.

    Polyhedral case: strata are enumerated as face subsets with a nonempty
    relative interior inside the bounding box.  Curved pieces are handled by
    sampling their charts.  The boundary is certified iff every stratum passes.
    """
    from itertools import combinations

    results = []
    polyhedral = all(p.kind == "half-space" for p in domain.pieces)
    if polyhedral:
        m = len(domain.pieces)
        for size in range(1, m + 1):
            for subset in combinations(range(m), size):
                rep = _stratum_representative(domain, set(subset))
                if rep is None:
                    continue
                try:
                    ok, _, margin = completely_s_at(domain, rep)
                except EmptyActiveSet:
                    continue
                results.append(StratumResult(subset, rep, ok, margin))
    else:
        pts = sample_boundary(domain, curved_samples, seed=seed)
        by_stratum = {}
        for x in pts:
            try:
                idx = tuple(active_set(domain, x, tol=10 * domain.tol_at(x)))
            except EmptyActiveSet:
                continue
            ok, _, margin = completely_s_at(domain, x)
            cur = by_stratum.get(idx)
            if cur is None or margin < cur.margin:
                by_stratum[idx] = StratumResult(idx, x, ok, margin)
        results = list(by_stratum.values())
    return CompletelySReport(results, all(r.passed for r in results))


def edge_normal(domain: DomainSpec, i: int, j: int, x, tol: float = 1e-12):
    """Unit vector normal to the (i,j) edge and to n_i, pointing into face i."""
    x = np.asarray(x, dtype=float)
    ni = domain.pieces[i].unit_normal(x)
    nj = domain.pieces[j].unit_normal(x)
    c = float(np.dot(ni, nj))
    if abs(c) >= 1.0 - 1e-10:
        raise ParallelNormals(f"faces {i} and {j} have parallel normals at {x}")
    v = (nj - c * ni) / np.sqrt(1.0 - c * c)
    return v


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_closure(domain: DomainSpec, n: int, seed: int = 0,
                   center=None, radius=None, max_tries: int = 400):
    """Rejection-sample n points from the closed domain (optionally inside a ball)."""
    rng = np.random.default_rng(seed)
    lo, hi = domain.bbox
    if center is not None:
        center = np.asarray(center, dtype=float)
        lo = np.maximum(lo, center - radius)
        hi = np.minimum(hi, center + radius)
    out = np.empty((0, domain.dimension))
    tries = 0
    while len(out) < n and tries < max_tries:
        cand = rng.uniform(lo, hi, size=(max(4 * n, 256), domain.dimension))
        vals = domain.piece_values_batch(cand)
        keep = np.all(vals >= -domain.active_tol, axis=1)
        if center is not None:
            keep &= np.linalg.norm(cand - center, axis=1) <= radius
        out = np.vstack([out, cand[keep]])
        tries += 1
    if len(out) < n:
        raise SamplingFailure(
            f"could not draw {n} points from the domain (got {len(out)})")
    return out[:n]


def project_to_piece(domain: DomainSpec, piece_index: int, x, newton_steps: int = 30):
    """Project a point onto the zero set of one piece (Newton along the gradient)."""
    p = domain.pieces[piece_index]
    x = np.asarray(x, dtype=float).copy()
    if p.kind == "half-space":
        return x - p.value(x) * p.normal
    for _ in range(newton_steps):
        v = p.value(x)
        if abs(v) < 1e-13 * (1 + np.linalg.norm(x)):
            break
        g = np.asarray(p.grad_phi(x), dtype=float)
        x = x - v * g / max(float(g @ g), 1e-300)
    return x


def sample_boundary(domain: DomainSpec, n: int, seed: int = 0,
                    center=None, radius=None):
    """Sample ~n points on the boundary by projecting domain samples to pieces.

    Points are spread over the pieces; only projections that stay in the
    closed domain are kept.
    """
    rng = np.random.default_rng(seed)
    m = len(domain.pieces)
    per = max(1, n // m + 1)
    pts = []
    vols = sample_closure(domain, per * 3, seed=seed, center=center, radius=radius)
    for i in range(m):
        cand = vols[rng.permutation(len(vols))[:per * 2]]
        for x in cand:
            y = project_to_piece(domain, i, x)
            tol = 10 * domain.tol_at(y)
            if np.all(domain.piece_values(y) >= -tol):
                if center is None or np.linalg.norm(y - center) <= radius:
                    pts.append(y)
            if len(pts) >= per * (i + 1):
                break
    if not pts:
        raise SamplingFailure("no boundary samples produced")
    out = np.array(pts)
    return out[:n] if len(out) >= n else out


def distance_to_boundary(domain: DomainSpec, x) -> float:
    """Distance from an interior point to the boundary.

    Exact for half-space pieces; Newton projection for smooth pieces.
    """
    x = np.asarray(x, dtype=float)
    d = np.inf
    for i, p in enumerate(domain.pieces):
        if p.kind == "half-space":
            d = min(d, abs(p.value(x)))
        else:
            y = project_to_piece(domain, i, x)
            d = min(d, float(np.linalg.norm(y - x)))
    return d


# ---------------------------------------------------------------------------
# Boundary quadrature
# ---------------------------------------------------------------------------

def _tangent_basis(n: np.ndarray) -> np.ndarray:
    """(J-1, J) orthonormal basis of the hyperplane orthogonal to unit n."""
    J = len(n)
    basis = []
    for k in range(J):
        e = np.zeros(J)
        e[k] = 1.0
        t = e - np.dot(e, n) * n
        for b in basis:
            t = t - np.dot(t, b) * b
        nrm = np.linalg.norm(t)
        if nrm > 1e-10:
            basis.append(t / nrm)
        if len(basis) == J - 1:
            break
    return np.array(basis)


def boundary_quadrature(domain: DomainSpec, piece_index: int, resolution: int):
    """Weighted points approximating surface measure on one boundary piece.

    Half-space pieces are gridded in tangent coordinates clipped to the other
    pieces and the bounding box; smooth pieces require a chart.
    Returns (points (n, J), weights (n,)).
    """
    p = domain.pieces[piece_index]
    if p.kind == "smooth":
        if p.chart is None:
            raise ChartMissing(f"piece {piece_index} has no chart")
        pts, w = p.chart(resolution)
        return np.asarray(pts, dtype=float), np.asarray(w, dtype=float)

    J = domain.dimension
    n, c = p.normal, p.offset
    x0 = c * n
    if J == 1:
        return x0.reshape(1, 1), np.ones(1)
    T = _tangent_basis(n)
    lo, hi = domain.bbox

    if J == 2:
        u = T[0]
        # exact parameter interval from the other (linear) constraints and bbox
        t_lo, t_hi = -np.inf, np.inf
        rows = [(q.normal, q.offset) for k, q in enumerate(domain.pieces)
                if k != piece_index and q.kind == "half-space"]
        for k in range(J):
            e = np.zeros(J)
            e[k] = 1.0
            rows.append((e, lo[k]))
            rows.append((-e, -hi[k]))
        curved = [q for k, q in enumerate(domain.pieces)
                  if k != piece_index and q.kind != "half-space"]
        for a, b in rows:
            au = float(np.dot(a, u))
            ax = float(np.dot(a, x0))
            if abs(au) < 1e-14:
                if ax < b - 1e-12:
                    return np.empty((0, J)), np.empty(0)
                continue
            t = (b - ax) / au
            if au > 0:
                t_lo = max(t_lo, t)
            else:
                t_hi = min(t_hi, t)
        if not np.isfinite(t_lo) or not np.isfinite(t_hi) or t_hi <= t_lo:
            return np.empty((0, J)), np.empty(0)
        ts = t_lo + (np.arange(resolution) + 0.5) * (t_hi - t_lo) / resolution
        pts = x0[None, :] + ts[:, None] * u[None, :]
        w = np.full(resolution, (t_hi - t_lo) / resolution)
        if curved:
            keep = np.ones(len(pts), dtype=bool)
            for q in curved:
                keep &= q.values(pts) >= -1e-9
            pts, w = pts[keep], w[keep]
        return pts, w

    # J >= 3: grid tangent coordinates over the bbox extent, keep feasible cells
    extents = []
    for t in T:
        lo_t = np.dot(np.where(t > 0, lo, hi) - x0, t)
        hi_t = np.dot(np.where(t > 0, hi, lo) - x0, t)
        extents.append((min(lo_t, hi_t), max(lo_t, hi_t)))
    axes = [l + (np.arange(resolution) + 0.5) * (h - l) / resolution
            for l, h in extents]
    cell = np.prod([(h - l) / resolution for l, h in extents])
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    pts = x0[None, :] + coords @ T
    vals = domain.piece_values_batch(pts)
    vals[:, piece_index] = 0.0
    keep = np.all(vals >= -1e-9, axis=1)
    inbox = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
    keep &= inbox
    return pts[keep], np.full(int(keep.sum()), cell)


# ---------------------------------------------------------------------------
# Singular-point certificate check
# ---------------------------------------------------------------------------

@dataclass
class CertificateReport:
    """Margins of the four singular-point certificate checks (>= 0 passes)."""

    angle_margin: float
    reflection_margin: float
    ellipticity_margin: float
    sandwich_left_margin: float
    sandwich_right_margin: float
    samples_used: int
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return (self.angle_margin >= -self.tol
                and self.reflection_margin >= -self.tol
                and self.ellipticity_margin >= -self.tol
                and self.sandwich_left_margin >= -self.tol
                and self.sandwich_right_margin >= -self.tol)


def check_singular_certificate(domain: DomainSpec, sp: SingularPoint,
                               coefficients=None, samples: int = 2000,
                               seed: int = 0, radius_grid: int = 8,
                               tol: float = 1e-7) -> CertificateReport:
    """Sampled verification of the singular-point certificate.

    Checks, over draws y from the closed domain near the point:
      (1) <v, y-x> >= alpha |y-x|;
      (2) <v, gamma_i(y)> >= 0 for active i at boundary samples;
      (3) v' a(y) v >= alpha (when coefficients are given);
      (4) the two-sided ball sandwich at a grid of radii r < radius/c2.
    Margins are worst-case; nonnegative margins (within tol) pass.
    """
    x, v = sp.x, sp.v
    lo, hi = domain.bbox
    reach = float(np.linalg.norm(hi - lo))
    r_eff = min(sp.radius, reach)
    Y = sample_closure(domain, samples, seed=seed, center=x, radius=r_eff)
    d = np.linalg.norm(Y - x, axis=1)
    h = (Y - x) @ v
    nz = d > 1e-12
    angle_margin = float(np.min(h[nz] - sp.alpha * d[nz])) if nz.any() else 0.0

    B = sample_boundary(domain, max(200, samples // 4), seed=seed + 1,
                        center=x, radius=r_eff)
    refl = np.inf
    for y in B:
        try:
            idx = active_set(domain, y, tol=10 * domain.tol_at(y))
        except EmptyActiveSet:
            continue
        for i in idx:
            refl = min(refl, float(np.dot(v, domain.pieces[i].gamma(y))))
    reflection_margin = refl if np.isfinite(refl) else 0.0

    if coefficients is not None:
        av = np.array([v @ coefficients.a(y) @ v for y in Y])
        ellipticity_margin = float(np.min(av) - sp.alpha)
    else:
        ellipticity_margin = 0.0

    # sandwich: for y in closed domain near x and r in the grid,
    #   |y-x| <= c1 r  =>  h(y) < r      (left)
    #   h(y) < r       =>  |y-x| <= c2 r (right)
    left = np.inf
    right = np.inf
    for r in np.linspace(r_eff / sp.c2 / radius_grid, r_eff / sp.c2, radius_grid,
                         endpoint=False):
        mask_l = d <= sp.c1 * r
        if mask_l.any():
            left = min(left, float(np.min(r - h[mask_l])))
        mask_r = h < r
        if mask_r.any():
            right = min(right, float(np.min(sp.c2 * r - d[mask_r])))
    left = left if np.isfinite(left) else 0.0
    right = right if np.isfinite(right) else 0.0
    return CertificateReport(angle_margin, reflection_margin, ellipticity_margin,
                             left, right, samples, tol)
