"""Benchmark the compiled kernels against the pure-numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Each kernel is timed in both lanes on a representative workload and the
agreement between lanes is reported (the down-up walk must match byte for
byte; the enumeration kernel to float tolerance).
"""

import sys

from hardising import kernels
from hardising.harness import experiment_kernels


def main():
    if not kernels.COMPILED:
        print("note: compiled extension unavailable; timing fallback against itself")
    rows = experiment_kernels(seed=0)
    name_w = max(len(r["kernel"]) for r in rows) + 2
    print(f"{'kernel':<{name_w}}{'compiled (s)':>14}{'fallback (s)':>14}{'speedup':>10}{'max |diff|':>12}")
    ok = True
    for r in rows:
        speedup = r["fallback_s"] / r["lane_s"] if r["lane_s"] > 0 else float("inf")
        print(f"{r['kernel']:<{name_w}}{r['lane_s']:>14.4f}{r['fallback_s']:>14.4f}"
              f"{speedup:>10.1f}{r['max_abs_diff']:>12.3g}")
        ok = ok and r["max_abs_diff"] <= r["tol"]
    print("lane agreement:", "ok" if ok else "MISMATCH")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
