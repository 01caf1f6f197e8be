"""Compare the numba-compiled kernels against their pure-Python fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Kernel rows time ``kernel`` against ``kernel.py_func`` in one process. The
closed-loop row runs a short head-on scenario in two subprocesses, with and
without ``BARRIERDIFF_DISABLE_JIT=1``.
"""

import argparse
import os
import subprocess
import sys
import time
import timeit

import numpy as np

from barrierdiff.dynamics import VehicleShape, rollout_kernel
from barrierdiff.geometry import segment_closest
from barrierdiff.safety import safe_speed_kernel
from barrierdiff.sim.metrics import ttc_kernel

SHAPE = VehicleShape().as_array()
rng = np.random.default_rng(0)
SEGS = [tuple(rng.uniform(-5, 5, 8)) for _ in range(1000)]
CONTROLS = np.column_stack([rng.uniform(-3, 2, 79), rng.uniform(-0.4, 0.4, 79)])
STATE0 = np.array([0.0, 0.0, 0.0, 0.0, 8.0])
H, A = rng.uniform(-1, 3, 8), rng.uniform(-1, 1, 8)
EGO = np.array([0.0, 0.0, 0.0, 10.0])
AGENTS = np.column_stack([rng.uniform(10, 60, 6), rng.uniform(-10, 10, 6), rng.uniform(-3, 3, 6),
                          rng.uniform(0, 10, 6)])
SHAPES = np.tile(SHAPE, (6, 1))


def cases():
    def seg(f):
        return lambda: [f(*s) for s in SEGS]

    def roll(f):
        return lambda: f(STATE0, CONTROLS, 0.1, 2.9)

    def qp(f):
        return lambda: f(8.0, H, A, 8, 1.0, 1e3, 15.0, np.zeros(8))

    def ttc(f):
        return lambda: f(EGO, SHAPE, AGENTS, SHAPES, 0.1, 10.0)

    return [("segment_closest x1000", segment_closest, seg), ("rollout K=80", rollout_kernel, roll),
            ("safe_speed n=8", safe_speed_kernel, qp), ("ttc 6 agents", ttc_kernel, ttc)]


def best(fn, repeat):
    fn()  # warm up (triggers compilation)
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


CLOSED_LOOP = ("from dataclasses import replace; from barrierdiff.planner import PlannerConfig; "
               "from barrierdiff.sim import builtin, run_scenario; "
               "run_scenario(replace(builtin('headon-1'), duration=3.0), PlannerConfig())")


def closed_loop(disable: bool) -> float:
    env = dict(os.environ)
    env.pop("BARRIERDIFF_DISABLE_JIT", None)
    if disable:
        env["BARRIERDIFF_DISABLE_JIT"] = "1"
    # first run fills the numba cache so the timed run measures execution only
    subprocess.run([sys.executable, "-c", CLOSED_LOOP], env=env, check=True)
    t0 = time.perf_counter()
    subprocess.run([sys.executable, "-c", CLOSED_LOOP], env=env, check=True)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'case':<24}{'jit':>12}{'python':>12}{'speedup':>10}")
    for name, kernel, make in cases():
        fast, slow = best(make(kernel), args.repeat), best(make(kernel.py_func), args.repeat)
        print(f"{name:<24}{fast * 1e6:>10.1f}us{slow * 1e6:>10.1f}us{slow / fast:>9.1f}x")
    fast, slow = closed_loop(False), closed_loop(True)
    print(f"{'closed loop 3 s headon':<24}{fast:>11.2f}s{slow:>11.2f}s{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
