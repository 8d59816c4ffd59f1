"""Compare the compiled and pure-Python solver kernels.

    python benchmarks/bench_kernels.py [--K 10] [--T 20] [--repeat 5] [--end-to-end]

Kernel inputs come from a real problem instance at the solver's starting
point. ``--end-to-end`` also times a full ``solve_joint`` in a subprocess
per backend (backend choice is fixed at import time).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from awfl.kernels import available_backends
from awfl.solver import ProblemInstance, SolverSettings, initial_point
from awfl.solver.algorithms import _bandwidth_terms
from awfl.wireless import CellConfig, channel_gains, place_clients


def make_instance(K: int, T: int, seed: int = 0) -> ProblemInstance:
    cell = CellConfig.from_dbm(5e6, -174.0, 6.37e6)
    profiles = place_clients(K, cell, seed)
    return ProblemInstance(0.05, 0.05, cell, profiles, channel_gains(profiles, range(T)))


def kernel_cases(inst: ProblemInstance):
    st = inst.structure()
    aux, p, _ = initial_point(st)
    s = SolverSettings()
    a, b = _bandwidth_terms(aux.alpha, aux.beta, st)
    cost = aux.alpha * st.energy[:, None]
    K, T = st.shape
    x = np.geomspace(1e-12, 1e6, 10_000) - 1 / np.e
    return {
        "lambert_w0 (1e4 points)": lambda m: m.lambert_w0(x),
        "bcd_solve (cold start)": lambda m: m.bcd_solve(cost, st.conv, np.full((K, T), st.lam),
                                                        st.lam, s.bcd_tol, s.max_bcd_sweeps),
        "dual_bandwidth": lambda m: m.dual_bandwidth(a, b, s.step_scale * np.median(a, axis=0),
                                                     s.dual_tol, s.max_dual_iter),
        "min_energy_bandwidth": lambda m: m.min_energy_bandwidth(p * st.energy[:, None], b,
                                                                 1e-15, 200),
    }


def best_time(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def end_to_end(K: int, T: int, pure: bool) -> float:
    code = (
        "import time, sys; sys.path.insert(0, %r)\n"
        "from bench_kernels import make_instance\n"
        "from awfl.solver import solve_joint\n"
        "inst = make_instance(%d, %d)\n"
        "t = time.perf_counter(); solve_joint(inst); print(time.perf_counter() - t)\n"
    ) % (os.path.dirname(os.path.abspath(__file__)), K, T)
    env = dict(os.environ, AWFL_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--T", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    backends = available_backends()
    cases = kernel_cases(make_instance(args.K, args.T))
    names = list(backends)
    print(f"K={args.K} T={args.T}; backends: {', '.join(names)}")
    print(f"{'kernel':28s}" + "".join(f"{n:>14s}" for n in names) + "   speedup")
    for label, fn in cases.items():
        times = {n: best_time(lambda m=mod: fn(m), args.repeat) for n, mod in backends.items()}
        row = f"{label:28s}" + "".join(f"{times[n] * 1e3:11.3f} ms" for n in names)
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:7.1f}x"
        print(row)
    if args.end_to_end:
        py = end_to_end(args.K, args.T, pure=True)
        line = f"{'solve_joint (end to end)':28s}{py * 1e3:11.1f} ms"
        if "cython" in backends:
            cy = end_to_end(args.K, args.T, pure=False)
            line = f"{'solve_joint (end to end)':28s}{py * 1e3:11.1f} ms{cy * 1e3:11.1f} ms   {py / cy:7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
