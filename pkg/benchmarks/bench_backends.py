#!/usr/bin/env python3
"""Benchmark the compiled convolution kernels against the NumPy reference.

Runs every kernel (forward, kernel-gradient, input-gradient) over the shapes
the encoder actually uses, at fine-tune scale and pre-train scale, and prints
a table with the speedup of the compiled extension over pure NumPy. The
dispatch column shows which implementation the installed backend would pick
for that shape.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""
import argparse
import time

import numpy as np

from scmm import backend
from scmm.backend import pyref

try:
    from scmm.backend import _core
except ImportError:
    _core = None

# (label, batch, cin, length, cout, kernel)
SHAPES = [
    ("tiny  stage1", 8, 5, 10, 32, 3),
    ("tiny  stage2", 8, 32, 10, 64, 3),
    ("tiny  stage3", 8, 64, 10, 128, 3),
    ("train stage1", 512, 5, 34, 32, 3),
    ("train stage2", 512, 32, 34, 64, 3),
    ("train stage3", 512, 64, 34, 128, 3),
]


def timeit(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e6


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if _core is None:
        print("compiled extension not built; nothing to compare")
        return

    rng = np.random.default_rng(0)
    print(f"selected backend: {backend.BACKEND}")
    header = f"{'shape':14s} {'kernel':8s} {'compiled us':>12s} {'numpy us':>12s} {'speedup':>8s} {'dispatch':>9s}"
    print(header)
    print("-" * len(header))
    for label, b, cin, length, cout, k in SHAPES:
        x = np.ascontiguousarray(rng.normal(size=(b, cin, length)))
        kern = np.ascontiguousarray(rng.normal(size=(cout, cin, k)))
        out_len = length - k + 1
        go = np.ascontiguousarray(rng.normal(size=(b, cout, out_len)))
        rows = [
            ("forward",
             lambda: _core.conv1d_forward(x, kern, 1),
             lambda: pyref.conv1d_forward(x, kern, 1),
             lambda: backend.conv1d_forward(x, kern, 1)),
            ("grad_k",
             lambda: _core.conv1d_grad_kernels(x, go, k, 1),
             lambda: pyref.conv1d_grad_kernels(x, go, k, 1),
             lambda: backend.conv1d_grad_kernels(x, go, k, 1)),
            ("grad_in",
             lambda: _core.conv1d_grad_input(go, kern, length, 1),
             lambda: pyref.conv1d_grad_input(go, kern, length, 1),
             lambda: backend.conv1d_grad_input(go, kern, length, 1)),
        ]
        for name, compiled, python, dispatched in rows:
            t_c = timeit(compiled, args.repeats)
            t_p = timeit(python, args.repeats)
            t_d = timeit(dispatched, args.repeats)
            picked = "compiled" if abs(t_d - t_c) < abs(t_d - t_p) else "numpy"
            print(f"{label:14s} {name:8s} {t_c:12.1f} {t_p:12.1f} {t_p / t_c:8.2f} {picked:>9s}")


if __name__ == "__main__":
    main()
