"""Throughput comparison of the compiled sweep kernels vs the numpy fallback.

Runs identical red-black PSOR sweeps through both backends, checks bitwise
agreement of the resulting fields, and reports node-updates per second.

    python3 benchmarks/bench_kernels.py --nodes 65 --sweeps 50
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from thinfb import _kernels_py
from thinfb.solver import Grid

try:
    from thinfb import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _timed(fn, reps):
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return time.perf_counter() - t0


def bench_psor(backend, n, sweeps, d):
    grid = Grid(d, n)
    izp = grid.izp
    rng = np.random.default_rng(1)
    u = rng.standard_normal(grid.shape)
    fn = backend.psor_sweep_sym_3d if d == 3 else backend.psor_sweep_sym_2d

    def one():
        fn(u, izp, 1.9, 0)
        fn(u, izp, 1.9, 1)

    elapsed = _timed(one, sweeps)
    return u, sweeps * u.size / elapsed


def bench_band(backend, n_lat, n_phi, sweeps):
    rng = np.random.default_rng(2)
    nb = n_lat // 3
    w = rng.standard_normal((nb + 1, n_phi))
    aN = np.abs(rng.standard_normal(nb)) + 1.0
    aS = np.abs(rng.standard_normal(nb)) + 1.0
    aP = np.abs(rng.standard_normal(nb)) + 1.0
    diag = 2.0 * (aN + aS + aP) + 1.0
    src = rng.standard_normal((nb + 1, n_phi))
    obs = rng.standard_normal(n_phi)

    def one():
        backend.band_sweep(w, aN, aS, aP, diag, src, obs, 1.9, 0)
        backend.band_sweep(w, aN, aS, aP, diag, src, obs, 1.9, 1)

    elapsed = _timed(one, sweeps)
    return w, sweeps * w.size / elapsed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=65)
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--n-lat", type=int, default=97)
    ap.add_argument("--n-phi", type=int, default=128)
    args = ap.parse_args()

    if _kernels_c is None:
        print("compiled backend unavailable; benchmarking the fallback only")

    for label, bench, extra in [
        ("psor 3d", lambda b: bench_psor(b, args.nodes, args.sweeps, 3), ""),
        ("psor 2d", lambda b: bench_psor(b, args.nodes, args.sweeps * 20, 2), ""),
        ("band   ", lambda b: bench_band(b, args.n_lat, args.n_phi, args.sweeps * 20), ""),
    ]:
        u_py, rate_py = bench(_kernels_py)
        line = f"{label}  python {rate_py / 1e6:8.2f} Mupd/s"
        if _kernels_c is not None:
            u_c, rate_c = bench(_kernels_c)
            match = np.array_equal(u_py, u_c)
            line += (
                f"   cython {rate_c / 1e6:8.2f} Mupd/s   speedup {rate_c / rate_py:6.1f}x"
                f"   bitwise match: {match}"
            )
            if not match:
                raise SystemExit(f"{label}: backends disagree")
        print(line)


if __name__ == "__main__":
    main()
