#!/usr/bin/env python3
"""Benchmark the compiled hot kernels against the pure-numpy fallback.

Run:  python benchmarks/kernel_bench.py
"""
import timeit

import numpy as np

from ktlab.kernels import BACKEND, pykernels

try:
    from ktlab.kernels import _ckernels
except ImportError:
    _ckernels = None


def bench(label, fn, number=20):
    best = min(timeit.repeat(fn, number=number, repeat=3)) / number
    print(f"  {label:<28s} {best * 1e3:9.3f} ms")
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"selected backend: {BACKEND}")
    cases = [
        ("interp 2d, 4096 pts, N=64", (rng.standard_normal((64, 64)),
                                       rng.uniform(0, 64, size=(4096, 2)), False)),
        ("interp 2d clip, 16384 pts", (rng.standard_normal((64, 64)),
                                       rng.uniform(0, 64, size=(16384, 2)), True)),
        ("interp 3d, 4096 pts, N=32", (rng.standard_normal((32, 32, 32)),
                                       rng.uniform(0, 32, size=(4096, 3)), False)),
    ]
    for label, (vals, pts, clip) in cases:
        print(label)
        t_py = bench("python", lambda v=vals, p=pts, c=clip: pykernels.interp_cubic_periodic(v, p, c))
        if _ckernels is not None:
            t_c = bench("compiled", lambda v=vals, p=pts, c=clip: _ckernels.interp_cubic_periodic(v, p, c))
            print(f"  speedup: {t_py / t_c:.1f}x")

    npts, nmodes = 4096, 392
    pts = rng.uniform(0, 2 * np.pi, size=(npts, 2))
    kv = rng.integers(-8, 9, size=(nmodes, 2)).astype(float)
    ca = rng.standard_normal((nmodes, 2))
    sa = rng.standard_normal((nmodes, 2))
    print(f"trig mode sum, {npts} pts x {nmodes} modes")
    t_py = bench("python", lambda: pykernels.eval_trig_modes(pts, kv, ca, sa))
    if _ckernels is not None:
        t_c = bench("compiled", lambda: _ckernels.eval_trig_modes(pts, kv, ca, sa))
        print(f"  speedup: {t_py / t_c:.1f}x")


if __name__ == "__main__":
    main()
