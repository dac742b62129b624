"""Wall-clock comparison of the compiled kernels and the numpy fallback.

    python3 benchmarks/bench_backends.py --paths 4000 --repeat 3
"""
import argparse
import math
import time

import numpy as np

from shrinkball import backend
from shrinkball.engine import simulate_coupled, simulate_exits
from shrinkball.models import get_model

CASES = [
    # label, model, method, n
    ("bm1 naive", "bm1", "naive", 10_000),
    ("bm1 bridge", "bm1", "bridge_corrected", 10_000),
    ("bm1 substep", "bm1", "substepped", 10_000),
    ("rotbm2 substep", "rotbm2", "substepped", 10_000),
    ("ou1 bridge", "ou1", "bridge_corrected", 100),
]


def timed(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=4000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--h0", type=float, default=1e-2)
    args = p.parse_args(argv)
    if "compiled" not in backend.AVAILABLE:
        print("compiled extension not built; only the fallback is available")
    paths = np.arange(args.paths)
    print(f"{'case':16s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}  agree")
    for label, name, method, n in CASES:
        m = get_model(name)
        r = 1 / math.sqrt(n)

        def go(b, m=m, method=method, n=n, r=r):
            return simulate_exits(m, m.initial, r, args.h0 / n, method, 1, paths, backend=b)
        tp, bp = timed(lambda: go("python"), args.repeat)
        if "compiled" not in backend.AVAILABLE:
            print(f"{label:16s} {tp:10.3f}")
            continue
        tc, bc = timed(lambda: go("compiled"), args.repeat)
        agree = np.allclose(bp.exit_time, bc.exit_time, rtol=0, atol=1e-12)
        print(f"{label:16s} {tp:10.3f} {tc:11.3f} {tp / tc:8.1f}  {agree}")
    m = get_model("bm1")
    timings = []
    for b in backend.AVAILABLE[::-1]:
        t, _ = timed(lambda: simulate_coupled(m, m.initial, 1.0, 6.25e-5, [4, 16, 64], 1,
                                              paths[: args.paths // 4], backend=b), args.repeat)
        timings.append(t)
    print(f"{'coupled bias':16s} " + " ".join(f"{t:10.3f}" for t in timings))


if __name__ == "__main__":
    main()
