#!/usr/bin/env python3
"""Compare the numba kernels against the pure-Python/numpy fallback.

The backend is fixed when sodeflow.kernels is imported, so each side runs in
its own subprocess with SODEFLOW_BACKEND set.  Timed workloads:

* tape evaluation (value / dual / hyper-dual) of a mid-sized expression,
* a hyperbolic-plane geodesic integration,
* a Finsler semispray integration (in-kernel Hessian solves),
* a small disprisonment probe batch.

Run from the repository root:  python benchmarks/bench_backends.py
"""

import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
import sodeflow as sf

sf.kernels.warmup()

def clock(fn, repeat):
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best

e = sf.parse("sin(x1)*y1^3/(1 + y2^2) + sqrt(1 + x2^2)*tanh(y1*y2) + x1^2*y2")
tape = e.tape(2)
xy = np.array([0.3, -0.8, 1.1, 0.4])
seed = np.zeros(4); seed[2] = 1.0
stack1 = np.empty(tape.stack_size)
stack2 = np.empty((tape.stack_size, 2))
stack4 = np.empty((tape.stack_size, 4))
K = sf.kernels

poincare = sf.SodeField.from_expressions(["2*y1*y2/x2", "(y2^2 - y1^2)/x2"])
finsler = sf.FinslerStructure("(y1^2 + y2^2)/x2^2", 2,
                              chart=sf.Box([-5, 0.1], [5, 10])).semispray()
orbit = sf.SodeField.from_expressions(["-x1*(y1^2+y2^2)", "-x2*(y1^2+y2^2)"])

results = {
    "backend": K.BACKEND,
    "tape value [us]": 1e6 * clock(
        lambda: K.eval_value(tape.code, tape.consts, xy, stack1), 2000),
    "tape dual [us]": 1e6 * clock(
        lambda: K.eval_dual(tape.code, tape.consts, xy, seed, stack2), 2000),
    "tape hyper [us]": 1e6 * clock(
        lambda: K.eval_hyper(tape.code, tape.consts, xy, seed, seed, stack4), 2000),
    "geodesic integrate [ms]": 1e3 * clock(
        lambda: sf.integrate(poincare, ([0, 1], [1, 0]), 0.0, 2.0), 20),
    "finsler integrate [ms]": 1e3 * clock(
        lambda: sf.integrate(finsler, ([0, 1], [1, 0.2]), 0.0, 1.0), 5),
    "probe batch [ms]": 1e3 * clock(
        lambda: sf.probe_disprisonment(
            orbit, sf.ProbeSampling(base_per_axis=3, directions=4),
            base_box=sf.Box([-2, -2], [2, 2]), horizon=10.0), 1),
}
json.dump(results, sys.stdout)
"""


def run(backend: str) -> dict:
    env = dict(os.environ, SODEFLOW_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, "-c", WORKLOAD], env=env, capture_output=True, text=True
    )
    if proc.returncode != 0:
        raise SystemExit(f"{backend} run failed:\n{proc.stderr}")
    return json.loads(proc.stdout)


def main():
    numba = run("numba")
    numpy_ = run("numpy")
    keys = [k for k in numba if k != "backend"]
    width = max(len(k) for k in keys)
    print(f"{'workload':<{width}}  {'numba':>12}  {'numpy':>12}  {'speedup':>8}")
    for k in keys:
        ratio = numpy_[k] / numba[k] if numba[k] > 0 else float("inf")
        print(f"{k:<{width}}  {numba[k]:>12.3f}  {numpy_[k]:>12.3f}  {ratio:>7.1f}x")


if __name__ == "__main__":
    main()
