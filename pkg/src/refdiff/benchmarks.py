"""Benchmark the compiled kernels against their pure-numpy twins.

Run as `python -m refdiff.benchmarks`.  Reports wall times for the
constrained Euler walk and the exact half-line step on representative
workloads, and checks that both backends agree.
"""

from __future__ import annotations

import time

import numpy as np

from . import _kernels


def _time(fn, *args, repeat=3):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_walk(n_steps=200_000, seed=0):
    rng = np.random.default_rng(seed)
    x0 = np.array([1.0, 1.0])
    b = np.array([-1.0, -0.5])
    sigma = np.eye(2)
    normals = np.eye(2)
    offsets = np.zeros(2)
    gammas = np.array([[1.0, -0.3], [-0.3, 1.0]])
    noise = rng.standard_normal((n_steps, 2))
    args = (x0, b, sigma, normals, offsets, gammas, noise, 1e-3, 1e-12)
    rows = []
    if _kernels.HAVE_NUMBA:
        _kernels._walk_nb(*[np.ascontiguousarray(a, dtype=float) if isinstance(a, np.ndarray) else a for a in args])  # warm up JIT
        t_nb, out_nb = _time(lambda: _kernels._walk_nb(*args))
        rows.append(("constrained walk (2D orthant)", "numba", t_nb))
    t_py, out_py = _time(lambda: _kernels._walk_impl(*args))
    rows.append(("constrained walk (2D orthant)", "numpy", t_py))
    if _kernels.HAVE_NUMBA:
        same = np.allclose(out_nb[0], out_py[0]) and np.allclose(out_nb[1], out_py[1])
        rows.append(("constrained walk agreement", "both", same))
    return rows


def bench_halfline(n_steps=2_000_000, seed=1):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(n_steps)
    logu = np.log(rng.uniform(size=n_steps))
    args = (0.5, -1.0, 1.0, noise, logu, 1e-3)
    rows = []
    if _kernels.HAVE_NUMBA:
        _kernels._halfline_bridge_nb(*args)  # warm up JIT
        t_nb, out_nb = _time(lambda: _kernels._halfline_bridge_nb(*args))
        rows.append(("half-line bridge walk", "numba", t_nb))
    t_py, out_py = _time(lambda: _kernels._halfline_bridge_impl(*args))
    rows.append(("half-line bridge walk", "numpy", t_py))
    if _kernels.HAVE_NUMBA:
        rows.append(("half-line agreement", "both",
                     np.allclose(out_nb[0], out_py[0])))
    return rows


def main():
    print(f"active backend: {_kernels.backend_name()}")
    for rows in (bench_walk(), bench_halfline()):
        for name, backend, val in rows:
            if isinstance(val, float):
                print(f"{name:36s} {backend:6s} {val * 1e3:10.1f} ms")
            else:
                print(f"{name:36s} {backend:6s} {'ok' if val else 'MISMATCH'}")


if __name__ == "__main__":
    main()
