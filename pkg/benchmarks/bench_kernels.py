"""Time the compiled event kernel against the pure-Python fallback.

Usage: ``python benchmarks/bench_kernels.py [--N 1000] [--M 2] [--T 20] [--repeat 3]``
"""
import argparse
import time

import numpy as np

from glassflow import kernels
from glassflow.couplings import sample_couplings
from glassflow.model import ModelParams
from glassflow.simulation import init_spins_iid, simulate


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=1000)
    ap.add_argument("--M", type=int, default=2)
    ap.add_argument("--T", type=float, default=20.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    p = ModelParams(N=args.N, M=args.M, beta=0.7, s=1.0, c_floor=0.0, T=args.T, seed=0)
    J = sample_couplings(p.N, p.s, p.seed)
    sig0 = init_spins_iid(p)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    results = {}
    for name in backends:
        dt, traj = best_time(lambda: simulate(p, J, sig0, [p.T], backend=name), args.repeat)
        results[name] = (dt, traj.final)
        print(f"{name:>7}: {dt:.4f} s  ({traj.final.n_events} events, {traj.final.n_events / dt:.3g} events/s)")
    if len(results) == 2:
        a, b = results["python"][1], results["cython"][1]
        same = np.array_equal(a.sigma, b.sigma) and np.array_equal(a.G, b.G)
        print(f"speedup: {results['python'][0] / results['cython'][0]:.1f}x, identical final state: {same}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
