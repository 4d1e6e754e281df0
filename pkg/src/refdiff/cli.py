"""Batch command-line driver.

Commands: check-domain, make-tests, simulate, verify-bar, weak-check,
solve, report.  One JSON config schema serves every command; command-line
flags override config fields.  Artifacts are CSV/JSON with a '#' header line
carrying the config hash and seed, numbers at 17 significant digits.

Exit codes: 0 all verdicts pass; 1 a verdict failed; 2 usage/config error;
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from fractions import Fraction

import numpy as np

from . import domain as dom
from . import errors
from .coefficients import Density
from .gallery import closed_form_density, make_example
from .operators import verify_bar, weak_residual
from .simulate import boundary_occupation, occupation_measure, simulate_path
from .solver import (default_family, density_grid_measure, interior_grid,
                     polar_grid, residual_report, solve_stationary)
from .testfunctions import assemble_cover_family

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _num(s):
    if isinstance(s, (int, float)):
        return float(s)
    return float(Fraction(s))


def _num_list(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [_num(tok) for tok in str(s).split(",")]


def _config_hash(cfg: dict) -> str:
    canon = json.dumps({k: v for k, v in cfg.items()
                        if k not in ("output", "report_output", "inputs")},
                       sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _header(cfg: dict) -> str:
    return f"config={_config_hash(cfg)} seed={cfg.get('seed', 0)}"


def _write_json(path, payload, cfg):
    out = {"_meta": _header(cfg), **payload}
    with open(path, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=1, default=float)
    return path


def _write_csv(path, header_cols, rows, cfg):
    with open(path, "w") as fh:
        fh.write(f"# {_header(cfg)}\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    return path


def _build_system(cfg):
    if cfg.get("system_file"):
        from .coefficients import CoefficientField
        from .gallery import ExampleSystem

        with open(cfg["system_file"]) as fh:
            raw = json.load(fh)
        domain = dom.domain_from_json(raw)
        J = domain.dimension
        b = np.asarray(_num_list(cfg["b"]) if "b" in cfg else np.zeros(J))
        sig = np.eye(J) * (_num_list(cfg["sigma"])[0] if "sigma" in cfg else 1.0)
        coef = CoefficientField.constant(b, sig)
        return ExampleSystem("file", {"path": cfg["system_file"]}, domain, coef)
    name = cfg.get("preset")
    if not name:
        raise errors.RefdiffError("a --preset or --system-file is required")
    params = {}
    if name == "halfline":
        if "b" in cfg:
            params["b"] = _num_list(cfg["b"])[0]
        if "sigma" in cfg:
            params["sigma"] = _num_list(cfg["sigma"])[0]
    elif name == "orthant":
        params["J"] = int(cfg.get("J", 2))
        if "b" in cfg:
            params["b"] = _num_list(cfg["b"])
    elif name == "gps":
        params["J"] = int(cfg.get("J", 2))
        if "alpha" in cfg:
            params["alphabar"] = _num_list(cfg["alpha"])
        if "b" in cfg:
            params["b"] = _num_list(cfg["b"])
    elif name == "wedge":
        for key in ("zeta", "theta1", "theta2"):
            if key in cfg:
                params[key] = _num(cfg[key])
    elif name == "disk":
        if "radius" in cfg:
            params["radius"] = _num(cfg["radius"])
        if "b" in cfg:
            params["b"] = _num_list(cfg["b"])
    elif name == "cusp":
        for key in ("beta", "theta1", "theta2"):
            if key in cfg:
                params[key] = _num(cfg[key])
    return make_example(name, **params)


def _density_from_config(system, cfg):
    kind = cfg.get("density", "closed-form")
    if kind in ("closed-form", "auto"):
        return closed_form_density(system)
    if kind == "exp":
        theta = _num(cfg.get("theta", 1.0))
        J = system.domain.dimension
        if J != 1:
            raise errors.RefdiffError("exp density is one-dimensional")
        p = Density(lambda x: theta * np.exp(-theta * float(x[0])),
                    grad=lambda x: np.array([-theta ** 2 * np.exp(-theta * float(x[0]))]),
                    hess=lambda x: np.array([[theta ** 3 * np.exp(-theta * float(x[0]))]]),
                    name=f"exp({theta})")
        return p
    if kind == "uniform":
        c = _num(cfg.get("level", 1.0))
        J = system.domain.dimension
        return Density(lambda x: c, grad=lambda x: np.zeros(J),
                       hess=lambda x: np.zeros((J, J)), name="uniform")
    raise errors.RefdiffError(f"unknown density {kind!r}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_check_domain(cfg):
    system = _build_system(cfg)
    report = dom.check_completely_s(system.domain)
    sing = []
    for sp in system.domain.singular_points:
        rep = dom.check_singular_certificate(
            system.domain, sp, coefficients=system.coefficients,
            samples=int(cfg.get("samples", 2000)), seed=int(cfg.get("seed", 0)))
        sing.append({"x": list(map(float, sp.x)), "passed": rep.passed,
                     "margins": {
                         "angle": rep.angle_margin,
                         "reflection": rep.reflection_margin,
                         "ellipticity": rep.ellipticity_margin,
                         "sandwich_left": rep.sandwich_left_margin,
                         "sandwich_right": rep.sandwich_right_margin}})
    failing = [list(r.indices) for r in report.failing()]
    declared = [list(map(float, sp.x)) for sp in system.domain.singular_points]
    # verdict: failures allowed only at strata through declared singular points
    ok = True
    for r in report.failing():
        near = any(np.linalg.norm(np.asarray(r.representative) - np.asarray(s)) < 1e-6
                   for s in declared)
        if not near:
            ok = False
    ok = ok and all(s["passed"] for s in sing)
    payload = {
        "preset": system.name,
        "params": system.params,
        "strata": [{"faces": list(r.indices), "passed": bool(r.passed),
                    "margin": float(r.margin)} for r in report.strata],
        "boundary_fully_certified": report.boundary_is_certified,
        "failing_strata": failing,
        "singular_certificates": sing,
        "passed": bool(ok),
    }
    out = cfg.get("output", "check-domain.json")
    _write_json(out, payload, cfg)
    print(f"wrote {out}; verdict {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_make_tests(cfg):
    system = _build_system(cfg)
    fam = assemble_cover_family(system.domain, system.coefficients,
                                N=_num(cfg.get("N", 1.0)),
                                eps=_num(cfg.get("eps", 0.25)),
                                seed=int(cfg.get("seed", 0)))
    out = cfg.get("output", "family.json")
    _write_json(out, fam.manifest(), cfg)
    print(f"wrote {out}: {len(fam.bumps)} bumps, {len(fam.centers)} centers, "
          f"C={fam.C:.6g}")
    return EXIT_OK


def cmd_simulate(cfg):
    system = _build_system(cfg)
    x0 = _num_list(cfg.get("x0", list(np.zeros(system.domain.dimension))))
    traj = simulate_path(system.domain, system.coefficients, x0,
                         T=_num(cfg.get("T", 10.0)),
                         dt=_num(cfg.get("dt", 1e-3)),
                         seed=int(cfg.get("seed", 0)))
    out = cfg.get("output", "trajectory.csv")
    stride = max(1, int(cfg.get("stride", 1)))
    sub = traj.states[::stride]
    push = traj.pushing[::stride]
    ts = traj.times[::stride]
    rows = [tuple(map(float, np.concatenate([[t], s, p])))
            for t, s, p in zip(ts, sub, push)]
    cols = (["t"] + [f"x{k}" for k in range(sub.shape[1])]
            + [f"push{k}" for k in range(push.shape[1])])
    _write_csv(out, cols, rows, cfg)
    occ = occupation_measure(traj, burn_in=_num(cfg.get("burn_in", 0.1)))
    fb, fv = boundary_occupation(system.domain, traj,
                                 shell=_num(cfg.get("shell", 0.01)),
                                 burn_in=_num(cfg.get("burn_in", 0.1)))
    print(f"wrote {out}: {traj.n_steps} steps, boundary fraction {fb:.4f}, "
          f"singular fraction {fv:.4f}, events {len(traj.events)}")
    return EXIT_OK if not traj.events else EXIT_NUMERIC


def cmd_verify_bar(cfg):
    system = _build_system(cfg)
    try:
        p = _density_from_config(system, cfg)
    except errors.NoClosedForm as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = verify_bar(system.coefficients, system.domain, p,
                        interior_samples=int(cfg.get("samples", 400)),
                        seed=int(cfg.get("seed", 0)))
    out = cfg.get("output", "bar.json")
    _write_json(out, report.to_json(), cfg)
    print(f"wrote {out}; interior={report.interior_residual:.3e} "
          f"passed={report.passed}")
    return EXIT_OK if report.passed else EXIT_VERDICT


def cmd_weak_check(cfg):
    system = _build_system(cfg)
    try:
        p = _density_from_config(system, cfg)
    except errors.NoClosedForm as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    lo, hi = system.domain.bbox
    measure = density_grid_measure(system.domain, p,
                                   int(cfg.get("grid", 256)))
    fam = default_family(system.domain, system.coefficients,
                         n_interior=int(cfg.get("n_interior", 16)),
                         n_steps=int(cfg.get("n_steps", 24)),
                         min_feature=float(np.max(hi - lo)) / int(cfg.get("grid", 256)) * 2,
                         seed=int(cfg.get("seed", 0)))
    rows = []
    ok = True
    for k, f in enumerate(fam):
        if not f.claims_negated_in_class:
            continue
        wr = weak_residual(system.coefficients, f, measure, function_id=f"f{k}")
        rows.append((f"f{k}", float(wr.value), float(wr.error)))
        if wr.value > 3.0 * wr.error:
            ok = False
    out = cfg.get("output", "weak.csv")
    _write_csv(out, ["function", "value", "error"], rows, cfg)
    print(f"wrote {out}: {len(rows)} residuals, verdict {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_solve(cfg):
    system = _build_system(cfg)
    J = system.domain.dimension
    if system.name == "disk":
        grid = polar_grid(int(cfg.get("grid", 48)),
                          int(cfg.get("angular", 72)),
                          radius=system.params.get("radius", 1.0))
    else:
        box = None
        if "box" in cfg:
            hi_box = _num_list(cfg["box"])
            box = (np.zeros(J), np.asarray(hi_box))
        grid = interior_grid(system.domain, int(cfg.get("grid", 64)), box=box)
    lo, hi = grid.min(axis=0), grid.max(axis=0)
    fam = default_family(system.domain, system.coefficients,
                         n_interior=int(cfg.get("n_interior", 16)),
                         n_steps=int(cfg.get("n_steps", 24)),
                         box=(lo, hi),
                         min_feature=2 * float(np.max(hi - lo)) / int(cfg.get("grid", 64)),
                         seed=int(cfg.get("seed", 0)))
    try:
        res = solve_stationary(system.domain, system.coefficients,
                               grid_points=grid, family=fam,
                               tolerance=_num(cfg.get("tolerance", 2e-5)),
                               seed=int(cfg.get("seed", 0)))
    except errors.RefdiffError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = cfg.get("output", "measure.csv")
    rows = [tuple(map(float, np.concatenate([x, [w]])))
            for x, w in zip(res.measure.points, res.measure.weights)]
    _write_csv(out, [f"x{k}" for k in range(J)] + ["w"], rows, cfg)
    rep_out = cfg.get("report_output", "solve.json")
    _write_json(rep_out, {"objective": res.objective,
                          "iterations": res.iterations,
                          "feasible": res.feasible,
                          "family_size": len(fam)}, cfg)
    print(f"wrote {out}, {rep_out}; objective {res.objective:.3e} "
          f"feasible={res.feasible}")
    return EXIT_OK if res.feasible else EXIT_VERDICT


def cmd_report(cfg):
    parts = cfg.get("inputs", [])
    lines = []
    ok = True
    for path in parts:
        with open(path) as fh:
            payload = json.load(fh)
        verdict = payload.get("passed", payload.get("feasible"))
        if verdict is False:
            ok = False
        lines.append(f"{path}: verdict={verdict}")
    text = "\n".join(lines) if lines else "no inputs"
    out = cfg.get("output")
    if out:
        with open(out, "w") as fh:
            fh.write(f"# {_header(cfg)}\n{text}\n")
    print(text)
    return EXIT_OK if ok else EXIT_VERDICT


COMMANDS = {
    "check-domain": cmd_check_domain,
    "make-tests": cmd_make_tests,
    "simulate": cmd_simulate,
    "verify-bar": cmd_verify_bar,
    "weak-check": cmd_weak_check,
    "solve": cmd_solve,
    "report": cmd_report,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="refdiff",
        description="Reflected-diffusion geometry checks, simulation, "
                    "stationarity verification, and solving.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config file; flags override fields")
    ap.add_argument("--preset")
    ap.add_argument("--system-file", dest="system_file",
                    help="domain geometry JSON (coefficients from --b/--sigma)")
    ap.add_argument("--J", type=int)
    ap.add_argument("--alpha")
    ap.add_argument("--zeta")
    ap.add_argument("--theta1")
    ap.add_argument("--theta2")
    ap.add_argument("--beta")
    ap.add_argument("--radius")
    ap.add_argument("--b")
    ap.add_argument("--sigma")
    ap.add_argument("--density")
    ap.add_argument("--theta")
    ap.add_argument("--x0")
    ap.add_argument("--T")
    ap.add_argument("--dt")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--grid", type=int)
    ap.add_argument("--angular", type=int)
    ap.add_argument("--n-interior", dest="n_interior", type=int)
    ap.add_argument("--n-steps", dest="n_steps", type=int)
    ap.add_argument("--N")
    ap.add_argument("--eps")
    ap.add_argument("--samples", type=int)
    ap.add_argument("--tolerance")
    ap.add_argument("--burn-in", dest="burn_in")
    ap.add_argument("--stride", type=int)
    ap.add_argument("--box")
    ap.add_argument("--output")
    ap.add_argument("--report-output", dest="report_output")
    ap.add_argument("--inputs", nargs="*")
    ap.add_argument("--threads", type=int,
                    default=int(os.environ.get("REFDIFF_THREADS", "1")))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit:
        return EXIT_USAGE
    cfg = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    for key, val in vars(ns).items():
        if key in ("command", "config") or val is None:
            continue
        cfg[key] = val
    cfg.setdefault("seed", 0)
    numeric_errors = (errors.NoConvergence, errors.QPFailure,
                      errors.SamplingFailure, errors.LPFailure,
                      errors.Infeasible, errors.ZeroMass,
                      errors.DivergentMass, errors.NotInU, errors.NotInH)
    try:
        return COMMANDS[ns.command](cfg)
    except numeric_errors as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except errors.RefdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
