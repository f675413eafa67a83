#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Run from the repository root after building the extension in place:

    python3 setup.py build_ext --inplace
    python3 benchmarks/bench_kernels.py

The two backends produce bit-identical results (asserted below); the point
of the compiled path is the per-pixel loops: Poisson inversion sampling at
low photon counts and bilinear warping, which dominate simulation and
align-and-merge runtime.
"""
import time

import numpy as np

import fgsim.kernels as kernels
from fgsim.kernels import _core_np

try:
    from fgsim.kernels import _core_cy
except ImportError:
    _core_cy = None


def _time(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_poisson_inversion(impl, lam, seed):
    rng = np.random.default_rng(seed)
    u = rng.random(lam.size)
    p0 = np.exp(-lam)
    out = np.zeros(lam.shape)

    def run():
        impl.inversion_fill(lam, p0, u, out)

    return run, out


def bench_warp(impl, frame, u, v):
    out = np.zeros_like(frame)
    inb = np.zeros(frame.shape, np.uint8)

    def run():
        impl.warp_bilinear(frame, u, v, out, inb)

    return run, out


def main():
    print(f"active backend: {kernels.backend_name()}")
    if _core_cy is None:
        print("compiled backend not built; run: python3 setup.py build_ext --inplace")
        return

    rng = np.random.default_rng(0)
    rows = []

    for rate in (0.5, 3.0, 9.0):
        lam = np.full(512 * 512, rate)
        run_np, out_np = bench_poisson_inversion(_core_np, lam, 7)
        run_cy, out_cy = bench_poisson_inversion(_core_cy, lam, 7)
        t_np = _time(run_np)
        t_cy = _time(run_cy)
        run_np()
        run_cy()
        assert np.array_equal(out_np, out_cy), "backends disagree"
        rows.append((f"poisson inversion, rate {rate:>4}", t_np, t_cy))

    frame = rng.random((512, 512))
    u = rng.uniform(-6, 6, frame.shape)
    v = rng.uniform(-6, 6, frame.shape)
    run_np, out_np = bench_warp(_core_np, frame, u, v)
    run_cy, out_cy = bench_warp(_core_cy, frame, u, v)
    t_np = _time(run_np)
    t_cy = _time(run_cy)
    run_np()
    run_cy()
    assert np.array_equal(out_np, out_cy), "backends disagree"
    rows.append(("bilinear warp 512x512", t_np, t_cy))

    print(f"{'kernel':<32} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, t_np, t_cy in rows:
        print(f"{name:<32} {t_np * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms {t_np / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()
