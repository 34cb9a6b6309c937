"""Compare the numba and numpy kernel backends.

Each backend runs in its own interpreter because the choice is made at import
time from ``LEAKYMAP_BACKEND``.  Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _child(repeat: int, quick: bool) -> dict:
    import numpy as np

    from leakymap import _backend, kernels
    from leakymap.intervals import OpenIntervalSet, QuadMap
    from leakymap.simulate import survival_mc
    from leakymap.transfer.ulam import build_ulam

    q = QuadMap(2.0)
    H = OpenIntervalSet.from_pairs([(0.28, 0.30)])
    samples = 100_000 if quick else 1_000_000
    cells = 2048 if quick else 8192
    cases = {
        "uniforms": lambda: kernels.uniforms(0, 0, samples),
        "survival_mc": lambda: survival_mc(q, H, n_max=200, samples=samples, seed=0),
        "build_ulam": lambda: build_ulam(q, H, cells),
        "orbit_histogram": lambda: kernels.orbit_histogram(2.0, 0, 64, samples // 64, 100, 1024),
        "pullback": lambda: kernels.pullback(
            2.0, np.linspace(-0.9, 0.9, 4096), 12, np.ones(12, dtype=np.int64), np.zeros(14)
        ),
    }
    out = {"backend": _backend.backend_name(), "timings": {}}
    for name, fn in cases.items():
        fn()  # warm-up (includes JIT compilation on the numba path)
        best = min(_timed(fn) for _ in range(repeat))
        out["timings"][name] = best
    return out


def _timed(fn) -> float:
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(_child(args.repeat, args.quick)))
        return
    results = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, LEAKYMAP_BACKEND=backend)
        cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat)] + (["--quick"] if args.quick else [])
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[backend] = json.loads(res.stdout.strip().splitlines()[-1])["timings"]
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name in results["numba"]:
        a, b = results["numba"][name], results["numpy"][name]
        print(f"{name:<18}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
