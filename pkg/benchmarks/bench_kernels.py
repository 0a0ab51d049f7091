"""Throughput of the path ensemble kernels: numba versus the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--paths N] [--steps S] [--repeat R]

Both backends run the same ensembles (same keys, so identical results) and
the script reports path-steps per second.  Numba timings exclude the first
(compiling) call.  With FRAMEFLOW_NO_NUMBA=1 only the numpy backend runs.
"""
import argparse
import time

import numpy as np

from frameflow import kernels
from frameflow._accel import USE_NUMBA
from frameflow.fields import StripGrid, VelocityField


def _shear_field(dim):
    g = StripGrid(16, 9, 4.0, 4.0, dim=dim)

    def u(t, p):
        out = np.zeros((p.shape[0], dim))
        out[:, 0] = np.sin(p[:, -1])
        return out
    return VelocityField.from_function(g, [0.0], u)


def _time(backend, dim, n_paths, nsteps, velocity, repeat):
    starts = np.zeros((1, dim))
    starts[0, -1] = 0.3
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        r = kernels.run_ensemble(starts, n_paths, dt=1e-3, nsteps=nsteps, nu=0.5, height=4.0, seed=1,
                                 velocity=velocity, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, r


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["numba", "numpy"] if USE_NUMBA else ["numpy"]
    if USE_NUMBA:
        # compile outside the timed region
        for dim in (2, 3):
            for vel in (None, _shear_field(dim)):
                _time("numba", dim, 8, 2, vel, 1)
    print("%-5s %-9s %-6s %12s %16s" % ("dim", "drift", "backend", "seconds", "path-steps/s"))
    work = args.paths * args.steps
    for dim in (2, 3):
        for label, vel in (("none", None), ("shear", _shear_field(dim))):
            res = {}
            for b in backends:
                sec, r = _time(b, dim, args.paths, args.steps, vel, args.repeat)
                res[b] = r
                print("%-5d %-9s %-6s %12.3f %16.3e" % (dim, label, b, sec, work / sec))
            if len(res) == 2:
                diff = float(np.max(np.abs(res["numba"].M - res["numpy"].M)))
                print("      max |M_numba - M_numpy| = %.1e" % diff)


if __name__ == "__main__":
    main()
