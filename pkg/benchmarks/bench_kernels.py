#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--size N] [--repeat R] [--json]
"""

import argparse
import json
import time

import numpy as np

from satqkd import kernels


def _inputs(n, rng):
    ts = rng.random(n) * 1e7
    ch = rng.integers(0, 4, n).astype(np.int8)
    noise = rng.random(n) < 0.05
    e_det = np.full(n, 0.007)
    u = rng.random((3, n))
    inten = rng.choice(3, n, p=[0.5, 0.25, 0.25])
    p_signal = np.array([[2e-4, 3e-4, 3e-4, 2e-4], [2e-5, 4e-5, 4e-5, 2e-5], [0.0] * 4])
    p_noise = np.full(4, 2e-7)
    uu = rng.random((n, 8))
    return {
        "fold_histogram": (ts, 10.0, 0.1, 100),
        "window_mask": (ts, 10.0, 6.0, 1.0),
        "assign_bits": (ch, noise, e_det, u[0], u[1], u[2]),
        "per_pulse_events": (inten, p_signal, p_noise, e_det[:4], uu),
    }


def _best(func, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        func(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=2_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(42)
    inputs = _inputs(args.size, rng)
    rows = []
    for name, call_args in inputs.items():
        fast = getattr(kernels.numba_impl, name)
        slow = getattr(kernels.numpy_impl, name)
        fast(*call_args)  # compile
        t_nb = _best(fast, call_args, args.repeat)
        t_np = _best(slow, call_args, args.repeat)
        rows.append({"kernel": name, "n": args.size, "numba_s": t_nb, "numpy_s": t_np,
                     "speedup": t_np / t_nb if t_nb else float("nan")})

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for r in rows:
        print(f"{r['kernel']:<18} {1e3 * r['numba_s']:>10.2f} {1e3 * r['numpy_s']:>10.2f} {r['speedup']:>8.2f}")


if __name__ == "__main__":
    main()
