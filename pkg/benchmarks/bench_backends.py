#!/usr/bin/env python3
"""Benchmark the JIT-compiled kernels against the interpreted fallback.

Runs each batch kernel in a subprocess per backend (the backend is fixed at
import time via VERIMECH_NUMBA) and prints trials/second plus the speedup.
The two backends produce bit-identical trial records; only speed differs.

Usage: python benchmarks/bench_backends.py [--trials 200000] [--fallback-trials 2000]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    import verimech as vm
    from verimech import analysis

    trials = int(sys.argv[1])
    prof = vm.ValuationProfile(
        [[1, 0.2, 0, 0.4], [0.3, 0.9, 0.1, 0.2], [5, 5, 5, 5], [0.1, 0.8, 0.4, 0.9]],
        [[1, 0.2, 0, 0.4], [0.3, 0.9, 0.1, 0.2], [0, 0.5, 2.0, 0.1], [0.1, 0.8, 0.4, 0.9]])
    inst = vm.random_line_instance(6, 2, vm.RngStream(3))

    def runs():
        yield "power(l=3)", lambda: analysis.run_trials(vm.Power(3), prof, trials, seed=1)
        yield "exponential(a=0.5)", lambda: analysis.run_trials(vm.Exponential(0.5), prof, trials, seed=2)
        yield "partial-power(2,4)", lambda: analysis.run_trials(vm.PartialPower(2, 4), prof, trials, seed=3)
        yield "proportional(k=2)", lambda: vm.proportional_empirical(inst, trials, seed=4)

    results = {"backend": vm.kernel_backend(), "trials": trials, "timings": {}}
    for name, fn in runs():
        fn()  # warm-up (JIT compile / cache load)
        start = time.perf_counter()
        fn()
        results["timings"][name] = time.perf_counter() - start
    print(json.dumps(results))
""")


def run_backend(flag: str, trials: int) -> dict:
    env = dict(os.environ, VERIMECH_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", WORKER, str(trials)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200_000,
                        help="trials per kernel on the JIT backend")
    parser.add_argument("--fallback-trials", type=int, default=2_000,
                        help="trials per kernel on the interpreted backend")
    args = parser.parse_args()

    jit = run_backend("1", args.trials)
    plain = run_backend("0", args.fallback_trials)
    assert jit["backend"] == "numba", "numba backend unavailable"
    assert plain["backend"] == "numpy"

    print(f"{'kernel':<22} {'numba trials/s':>16} {'numpy trials/s':>16} {'speedup':>9}")
    for name in jit["timings"]:
        fast = jit["trials"] / jit["timings"][name]
        slow = plain["trials"] / plain["timings"][name]
        print(f"{name:<22} {fast:>16,.0f} {slow:>16,.0f} {fast / slow:>8.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
