"""Compare the compiled and NumPy DP backends on the default corridor.

    python benchmarks/bench_dp.py --repeat 3
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from ecoacc import kernels
from ecoacc.planner import _MASK_CACHE, _TABLE_CACHE, PlannerConfig, solve_dp
from ecoacc.signals import default_corridor
from ecoacc.vehicle import PlanState, default_vehicle


def time_solve(backend: str, repeat: int, n_v: int) -> tuple[list[float], object]:
    p, c = default_vehicle(), default_corridor()
    cfg = PlannerConfig.for_corridor(c, n_v=n_v)
    out, pol = [], None
    for _ in range(repeat):
        # Cold caches so every repetition builds its tables and masks.
        _TABLE_CACHE.clear()
        _MASK_CACHE.clear()
        t0 = time.perf_counter()
        pol = solve_dp(p, c, cfg, PlanState(1.0, 0.0), backend=backend)
        out.append(time.perf_counter() - t0)
    return out, pol


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n-v", type=int, default=31, help="velocity nodes")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    print(f"backends available: {', '.join(backends)} (default {kernels.BACKEND})")
    results = {}
    for b in backends:
        times, pol = time_solve(b, args.repeat, args.n_v)
        results[b] = (times, pol)
        print(f"{b:>7}: median {statistics.median(times):.3f} s  "
              f"min {min(times):.3f} s over {len(times)} solves")
    if len(results) == 2:
        (tn, pn), (tc, pc) = results["numpy"], results["cython"]
        same = np.array_equal(pn.value, pc.value) and np.array_equal(pn.torque_idx, pc.torque_idx)
        print(f"speedup {statistics.median(tn) / statistics.median(tc):.1f}x, "
              f"tables bit-identical: {same}")
        return 0 if same else 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
