"""Constrained Euler simulation of reflected diffusions.

Paths live on a uniform time grid; each step proposes an unconstrained Euler
move and projects it back into the domain along the active faces' reflection
vectors, recording the per-face pushing coefficients (the discrete local-time
proxy).  Gaussian increments come from counter-based Philox streams keyed by
(seed, path, step-block), so parallel paths are reproducible independently
of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from . import domain as dom
from .coefficients import CoefficientField
from .errors import NoConvergence
from .operators import apply_generator_batch

_PTOL = 1e-12


def _rng(seed: int, path: int = 0, block: int = 0) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(((path & 0xFFFFFFFF) << 32)
                              | (block & 0xFFFFFFFF))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _polyhedral_arrays(domain: dom.DomainSpec):
    normals = np.stack([p.normal for p in domain.pieces])
    offsets = np.array([p.offset for p in domain.pieces])
    x0 = normals[0] * offsets[0]
    gammas = np.stack([domain.pieces[i].gamma(x0)
                       for i in range(len(domain.pieces))])
    return normals, offsets, gammas


def _is_constant_polyhedral(domain: dom.DomainSpec) -> bool:
    return all(p.kind == "half-space" and not callable(p._gamma)
               for p in domain.pieces)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def reflect(domain: dom.DomainSpec, y, max_iter: int = 50, tol: float = 1e-10):
    """Project a candidate point into the closed domain along reflection vectors.

    Returns (x, eta) with x = y + sum_i eta_i gamma_i(x), eta >= 0 supported
    on the faces active at x.  Polyhedral constant-reflection domains use an
    exact active-set solve; state-dependent fields use fixed-point iteration
    on the arrival point's directions.  Raises NoConvergence on failure.
    """
    y = np.asarray(y, dtype=float)
    if _is_constant_polyhedral(domain):
        normals, offsets, gammas = _polyhedral_arrays(domain)
        x, eta, ok = _kernels.project_polyhedral(y, normals, offsets, gammas, _PTOL)
        if not ok:
            raise NoConvergence("active-set projection failed", point=y)
        return x, eta

    m = len(domain.pieces)
    x = y.copy()
    eta = np.zeros(m)
    for _ in range(max_iter):
        vals = domain.piece_values(x)
        viol = np.flatnonzero(vals < -tol)
        if len(viol) == 0:
            return x, eta
        # linearized solve on the violated set at the current arrival point
        normals = np.stack([domain.pieces[i].unit_normal(
            dom.project_to_piece(domain, int(i), x)) for i in viol])
        gammas = np.stack([domain.pieces[i].gamma(
            dom.project_to_piece(domain, int(i), x)) for i in viol])
        grads = []
        for i in viol:
            p = domain.pieces[i]
            if p.kind == "half-space":
                grads.append(p.normal)
            else:
                grads.append(np.asarray(p.grad_phi(x), dtype=float))
        Gm = np.stack(grads)
        M = Gm @ gammas.T
        try:
            step = np.linalg.solve(M, -vals[viol])
        except np.linalg.LinAlgError:
            raise NoConvergence("singular projection system", point=y)
        step = np.maximum(step, 0.0)
        x = x + step @ gammas
        eta[viol] += step
    vals = domain.piece_values(x)
    if np.min(vals) < -10 * tol:
        raise NoConvergence("fixed-point projection did not converge", point=y)
    return x, eta


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """A simulated path with per-face cumulative pushing coefficients."""

    dt: float
    states: np.ndarray            # (n+1, J)
    pushing: np.ndarray           # (n+1, m) cumulative
    seed: int
    events: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def to_csv(self, path, header_meta: str = ""):
        n, J = self.states.shape
        m = self.pushing.shape[1]
        cols = ["t"] + [f"x{k}" for k in range(J)] + [f"push{k}" for k in range(m)]
        data = np.column_stack([self.times, self.states, self.pushing])
        with open(path, "w") as fh:
            if header_meta:
                fh.write(f"# {header_meta}\n")
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass
class EmpiricalMeasure:
    """Equal-weight atoms at post-burn-in path states."""

    points: np.ndarray
    weights: np.ndarray
    burned: int = 0
    error_kind: str = "empirical"


def _simulate_constant(domain, coef, x0, n_steps, dt, seed, path_index=0):
    normals, offsets, gammas = _polyhedral_arrays(domain)
    b = coef.b(np.asarray(x0, dtype=float))
    sigma = coef.sigma(np.asarray(x0, dtype=float))
    noise = _rng(seed, path_index).standard_normal((n_steps, sigma.shape[1]))
    states, push, fail = _kernels.constrained_walk(
        x0, b, sigma, normals, offsets, gammas, noise, dt, _PTOL)
    events = []
    while fail >= 0:
        # local refinement: retry the failed step at halved step sizes
        x_cur = states[-1]
        k_global = len(states) - 1
        fixed = None
        for level in range(1, 9):
            sub = 2 ** level
            nz = _rng(seed, path_index, block=k_global * 16 + level)
            sub_noise = nz.standard_normal((sub, sigma.shape[1]))
            st2, pu2, f2 = _kernels.constrained_walk(
                x_cur, b, sigma, normals, offsets, gammas, sub_noise,
                dt / sub, _PTOL)
            if f2 < 0:
                fixed = (st2[-1], pu2[-1])
                break
        if fixed is None:
            events.append({"step": k_global, "point": x_cur.copy(),
                           "kind": "NoConvergence"})
            fixed = (x_cur, np.zeros(push.shape[1]))
        x_next, push_inc = fixed
        states = np.vstack([states, x_next[None, :]])
        push = np.vstack([push, (push[-1] + push_inc)[None, :]])
        remaining = n_steps - (len(states) - 1)
        if remaining <= 0:
            fail = -1
            break
        noise_rest = _rng(seed, path_index,
                          block=(len(states) - 1) * 16 + 9).standard_normal(
            (remaining, sigma.shape[1]))
        st3, pu3, fail = _kernels.constrained_walk(
            states[-1], b, sigma, normals, offsets, gammas, noise_rest, dt, _PTOL)
        states = np.vstack([states, st3[1:]])
        push = np.vstack([push, (push[-1] + pu3[1:])])
    return states, push, events


def _bridge_applicable(domain, coef) -> bool:
    return (domain.dimension == 1 and len(domain.pieces) == 1
            and domain.pieces[0].kind == "half-space"
            and getattr(coef, "is_constant", False))


def simulate_path(domain: dom.DomainSpec, coef: CoefficientField, x0, T: float,
                  dt: float, seed: int = 0, path_index: int = 0,
                  boundary_scheme: str = "auto") -> Trajectory:
    """Euler walk from x0 to time T with reflection at the boundary.

    boundary_scheme 'projection' applies the active-set projection to every
    proposed step (pushing lands exactly on the active faces).  On the 1D
    half-line with constant coefficients the projected chain carries an
    O(sqrt(dt)) boundary bias, so 'auto' upgrades that case to the exact
    bridge-minimum step ('bridge'), whose pushing may leave the endpoint in
    the interior (as the true local time does).
    """
    x0 = np.asarray(x0, dtype=float)
    cls, _ = dom.contains(domain, x0)
    if cls == dom.EXTERIOR:
        raise ValueError(f"start point {x0} is outside the closed domain")
    n_steps = int(round(T / dt))
    if boundary_scheme not in ("auto", "projection", "bridge"):
        raise ValueError(f"unknown boundary scheme {boundary_scheme!r}")
    if boundary_scheme == "bridge" and not _bridge_applicable(domain, coef):
        raise ValueError("bridge scheme needs a constant-coefficient half-line")
    use_bridge = (boundary_scheme == "bridge"
                  or (boundary_scheme == "auto" and _bridge_applicable(domain, coef)))
    if use_bridge:
        piece = domain.pieces[0]
        nrm = float(piece.normal[0])
        s0 = nrm * float(x0[0]) - piece.offset
        drift = nrm * float(coef.b(x0)[0])
        diff = abs(float(coef.sigma(x0)[0, 0]))
        rng = _rng(seed, path_index)
        noise = rng.standard_normal(n_steps)
        logu = np.log(rng.uniform(size=n_steps))
        s, push = _kernels.halfline_bridge_walk(s0, drift, diff, noise, logu, dt)
        states = ((s + piece.offset) * nrm)[:, None]
        return Trajectory(dt, states, push[:, None], seed, [])
    if _is_constant_polyhedral(domain) and getattr(coef, "is_constant", False):
        states, push, events = _simulate_constant(
            domain, coef, x0, n_steps, dt, seed, path_index)
        return Trajectory(dt, states, push, seed, events)

    # general path: python loop with per-step projection
    J = domain.dimension
    m = len(domain.pieces)
    sigma0 = coef.sigma(x0)
    noise = _rng(seed, path_index).standard_normal((n_steps, sigma0.shape[1]))
    states = np.empty((n_steps + 1, J))
    push = np.zeros((n_steps + 1, m))
    states[0] = x0
    x = x0.copy()
    sqdt = math.sqrt(dt)
    events = []
    for k in range(n_steps):
        y = x + coef.b(x) * dt + coef.sigma(x) @ noise[k] * sqdt
        try:
            x, eta = reflect(domain, y)
        except NoConvergence:
            fixed = False
            for level in range(1, 9):
                sub = 2 ** level
                nz = _rng(seed, path_index, block=k * 16 + level)
                sub_noise = nz.standard_normal((sub, sigma0.shape[1]))
                xs = x.copy()
                eta_acc = np.zeros(m)
                ok = True
                for l in range(sub):
                    ys = xs + coef.b(xs) * (dt / sub) + \
                        coef.sigma(xs) @ sub_noise[l] * math.sqrt(dt / sub)
                    try:
                        xs, eta_l = reflect(domain, ys)
                        eta_acc += eta_l
                    except NoConvergence:
                        ok = False
                        break
                if ok:
                    x, eta = xs, eta_acc
                    fixed = True
                    break
            if not fixed:
                events.append({"step": k, "point": x.copy(),
                               "kind": "NoConvergence"})
                eta = np.zeros(m)
        states[k + 1] = x
        push[k + 1] = push[k] + eta
    return Trajectory(dt, states, push, seed, events)


# ---------------------------------------------------------------------------
# Path statistics
# ---------------------------------------------------------------------------

def occupation_measure(traj: Trajectory, burn_in: float = 0.1) -> EmpiricalMeasure:
    """Equal-weight empirical measure of post-burn-in states."""
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn_in must be in [0, 1)")
    n = len(traj.states)
    k0 = int(burn_in * n)
    pts = traj.states[k0:]
    w = np.full(len(pts), 1.0 / len(pts))
    return EmpiricalMeasure(pts, w, burned=k0)


def boundary_occupation(domain: dom.DomainSpec, traj: Trajectory,
                        shell: float, burn_in: float = 0.0):
    """Fractions of post-burn-in time spent near the boundary and near the
    singular set (piece values as the distance proxy for curved pieces)."""
    n = len(traj.states)
    k0 = int(burn_in * n)
    pts = traj.states[k0:]
    vals = domain.piece_values_batch(pts)
    near_boundary = np.min(vals, axis=1) <= shell
    frac_b = float(np.mean(near_boundary))
    frac_v = 0.0
    if domain.singular_points:
        dmin = np.min(np.stack([np.linalg.norm(pts - sp.x, axis=1)
                                for sp in domain.singular_points]), axis=0)
        frac_v = float(np.mean(dmin <= shell))
    return frac_b, frac_v


def first_exit(traj: Trajectory, r: float) -> Optional[float]:
    """First grid time with |state| >= r, or None."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    hits = np.flatnonzero(np.linalg.norm(traj.states, axis=1) >= r)
    if len(hits) == 0:
        return None
    return float(hits[0] * traj.dt)


# ---------------------------------------------------------------------------
# Resolvent sampling
# ---------------------------------------------------------------------------

def resolvent_sample(domain: dom.DomainSpec, coef: CoefficientField, y,
                     lam: float, dt: float, seed: int = 0,
                     draw_index: int = 0) -> np.ndarray:
    """One draw of the exponentially-killed transition kernel.

    Draws t ~ Exponential(mean lam), simulates from y to time t, and returns
    the endpoint: a single transition of the resolvent chain.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    rng = _rng(seed, draw_index, block=1)
    t = float(rng.exponential(lam))
    n_full = int(t / dt)
    rem = t - n_full * dt
    traj = simulate_path(domain, coef, y, n_full * dt, dt, seed=seed,
                         path_index=2 * draw_index + 1)
    x = traj.states[-1]
    if rem > 1e-15:
        tr2 = simulate_path(domain, coef, x, rem, rem, seed=seed,
                            path_index=2 * draw_index + 2)
        x = tr2.states[-1]
    return x


def resolvent_sample_batch(domain, coef, ys, lam, dt, seed=0) -> np.ndarray:
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    return np.stack([resolvent_sample(domain, coef, y, lam, dt, seed=seed,
                                      draw_index=k)
                     for k, y in enumerate(ys)])


# ---------------------------------------------------------------------------
# Submartingale Monte-Carlo check
# ---------------------------------------------------------------------------

@dataclass
class SubmartingaleCurve:
    times: np.ndarray
    mean: np.ndarray
    ci: np.ndarray
    step_margins: np.ndarray
    consistent_nondecreasing: bool
    n_paths: int


def submartingale_estimate(domain: dom.DomainSpec, coef: CoefficientField, f,
                           x0, n_paths: int, T: float, dt: float,
                           checkpoints: Sequence[float], seed: int = 0,
                           check_membership: bool = False) -> SubmartingaleCurve:
    """Monte-Carlo estimate of m(t) = E[f(X_t) - int_0^t (L f)(X_u) du].

    The compensated process is a submartingale exactly for functions whose
    boundary inner products <gamma_i, grad f> are nonnegative (the negated
    admissible class): boundary pushing then only adds to f.  For such f the
    curve m must be nondecreasing; the verdict allows two standard errors of
    slack on every checkpoint pair (paired differences across common paths).
    """
    if check_membership:
        from .testfunctions import check_admissible

        rep = check_admissible(-f, domain, tol=1e-8)
        if not rep.passed:
            from .errors import NotInH

            raise NotInH(f"negated function fails admissibility: {rep}")
    n_steps = int(round(T / dt))
    cps = np.asarray(sorted(checkpoints), dtype=float)
    idx = np.minimum((cps / dt).round().astype(int), n_steps)
    vals = np.empty((n_paths, len(cps)))
    for p in range(n_paths):
        traj = simulate_path(domain, coef, x0, T, dt, seed=seed, path_index=p)
        lf = apply_generator_batch(coef, f, traj.states[:-1])
        comp = np.concatenate([[0.0], np.cumsum(lf) * dt])
        fvals = f._value(traj.states[idx])
        vals[p] = fvals - comp[idx]
    mean = vals.mean(axis=0)
    ci = 2.0 * vals.std(axis=0, ddof=1) / math.sqrt(n_paths)
    margins = []
    ok = True
    for k in range(len(cps) - 1):
        diff = vals[:, k + 1] - vals[:, k]
        se = diff.std(ddof=1) / math.sqrt(n_paths)
        margin = diff.mean() + 2.0 * se
        margins.append(margin)
        if margin < 0:
            ok = False
    return SubmartingaleCurve(cps, mean, ci, np.array(margins), ok, n_paths)
