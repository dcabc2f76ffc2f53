"""Time the compiled kernels against the pure-Python fallback.

Both implementations draw from the same streams, so each workload first
checks that the outputs agree bit for bit, then reports the best wall
time of a few repetitions and the speedup. Run from the repo root:

    python benchmarks/kernel_benchmark.py [--repeat N]
"""

import argparse
import time

import numpy as np

import loopsoup._kernels_py as pure
from loopsoup.rng import stream_prefix

try:
    import loopsoup._kernels as compiled
except ImportError:
    compiled = None


def _flatten(result):
    if isinstance(result, dict):
        return [np.asarray(result[k]) for k in sorted(result)
                if result[k] is not None]
    return [np.asarray(a) for a in result]


def _workloads():
    yield ("sweep_soup d=3 M=6 a=1.0",
           lambda m: m.sweep_soup(3, 6, 0.0, 1.0, 14, 42, 0))
    yield ("sweep_soup d=2 M=12 a=2.0",
           lambda m: m.sweep_soup(2, 12, 0.0, 2.0, 14, 42, 1))
    yield ("box_stage_batch d=5 M=8 x500",
           lambda m: m.box_stage_batch(5, 8, 0.0, 1.0, 14, 42,
                                       stream_prefix("bench", 4), 0, 500,
                                       [[0] * 5], target=(4, 0, 0, 0, 0)))
    yield ("explore d=3 M=8 x200",
           lambda m: [m.ClusterWorkspace(3, 8).explore(
               0.0, 1.0, 14, 42, sid, [(17**3) // 2]) for sid in range(200)])
    yield ("escape_counts d=3 R=16 w=2000",
           lambda m: m.escape_counts(3, [[0, 0, 0], [1, 0, 0]], 16, 2000,
                                     42, 3))
    yield ("excursion_batch d=3 R=32 x2000",
           lambda m: m.excursion_batch(3, 32, 2000, 42,
                                       stream_prefix("bench-exc", 32), 0,
                                       want_range=True))


def _best_time(fn, module, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(module)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3,
                    help="repetitions per workload (best time wins)")
    args = ap.parse_args()

    if compiled is None:
        print("compiled extension not built; nothing to compare")
        print("(python -m pip install -e . --no-build-isolation)")
        return

    header = f"{'workload':34} {'pure':>9} {'compiled':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, fn in _workloads():
        tp, rp = _best_time(fn, pure, args.repeat)
        tc, rc = _best_time(fn, compiled, args.repeat)
        if isinstance(rp, list):
            pairs = zip(rp, rc)
        else:
            pairs = [(rp, rc)]
        for a, b in pairs:
            for x, y in zip(_flatten(a), _flatten(b)):
                np.testing.assert_array_equal(x, y, err_msg=label)
        print(f"{label:34} {tp:8.3f}s {tc:8.3f}s {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
