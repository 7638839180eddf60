"""Time the compiled kernels against the numpy reference.

Usage: python3 bench/benchmark_kernels.py [--repeat N] [--pipeline]

Prints one line per kernel with the best-of-N time for each backend, the
speedup and the largest absolute difference between the two outputs. With
``--pipeline`` it also times complete noisy estimator runs under each
backend (in subprocesses, since the backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from risloc.channel import default_scenario
from risloc.geometry import direction
from risloc.kernels import _reference

try:
    from risloc.kernels import _fast
except ImportError:  # extension not built
    _fast = None


def cases(scen):
    ris = scen.ris
    k = scen.wavenumber
    rng = np.random.default_rng(0)
    th, ph = np.meshgrid(np.linspace(0, 2 * np.pi, 180, endpoint=False), np.linspace(0, np.pi / 2, 90), indexing="ij")
    dirs = direction(th.ravel(), ph.ravel())
    pts = 2.0 * dirs[:2000]
    p = scen.ue.position
    v = 20.0 * rng.standard_normal(3)
    w = np.ascontiguousarray(scen.weights)
    return {
        "mobile_response (L=40, M=1024)": lambda mod: mod.mobile_response(p, v, ris.elements, ris.reference, w, k, scen.rf.ts),
        "static_steering (2000 x 1024)": lambda mod: mod.static_steering(pts, ris.elements, ris.reference, k),
        "planar_steering (16200 x 1024)": lambda mod: mod.planar_steering(dirs, ris.offsets, k),
    }


PIPELINE_SNIPPET = """
import time
from risloc import BACKEND
from risloc.channel import default_scenario, observe
from risloc.estimator import find_pos_vel
scen = default_scenario(2.0, 1.0)
find_pos_vel(observe(scen, 0).y, scen)  # fills the dictionary cache
t = time.perf_counter()
for seed in range(1, 6):
    find_pos_vel(observe(scen, seed).y, scen)
print(BACKEND, (time.perf_counter() - t) / 5)
"""


def pipeline():
    for pure in ("", "1"):
        env = dict(os.environ, RISLOC_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", PIPELINE_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"full estimator trial, {backend:<7} backend: {float(secs):.3f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pipeline", action="store_true", help="also time whole estimator runs")
    args = ap.parse_args()
    scen = default_scenario(2.0, 1.0)
    if _fast is None:
        print("compiled extension not available; only the numpy backend can run")
    print(f"{'kernel':<34}{'numpy':>12}{'cython':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases(scen).items():
        t_ref = min(timeit.repeat(lambda: fn(_reference), number=1, repeat=args.repeat))
        if _fast is None:
            print(f"{name:<34}{t_ref * 1e3:>10.3f}ms{'-':>12}")
            continue
        t_fast = min(timeit.repeat(lambda: fn(_fast), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(fn(_fast) - fn(_reference))))
        print(f"{name:<34}{t_ref * 1e3:>10.3f}ms{t_fast * 1e3:>10.3f}ms{t_ref / t_fast:>9.1f}x{diff:>14.2e}")
    if args.pipeline:
        pipeline()


if __name__ == "__main__":
    main()
