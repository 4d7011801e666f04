"""Time the compiled and numpy alignment kernels and the deformable conv backends.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--size 128]
"""

from __future__ import annotations

import argparse
import time

import numpy as np
import torch

from rawvsr import _native
from rawvsr.model import dcn


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(size, repeat):
    rng = np.random.default_rng(0)
    img = rng.random((3, size, size))
    b = np.roll(img, (1, 2), axis=(1, 2))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mx, my = xx + 0.3, yy - 0.7
    backends = ["numpy"] + (["cython"] if _native.BACKEND == "cython" else [])
    cases = {
        "block_match r=3 b=3": lambda be: _native.block_match(img, b, 3, 3, backend=be),
        "remap_bilinear": lambda be: _native.remap_bilinear(img, mx, my, backend=be),
        "remap_nearest": lambda be: _native.remap_nearest(img, mx, my, backend=be),
    }
    rows = []
    for name, fn in cases.items():
        t = {be: best_of(lambda: fn(be), repeat) for be in backends}
        rows.append((name, t))
    return rows


def bench_dcn(size, repeat, channels=32, groups=4):
    torch.manual_seed(0)
    x = torch.randn(1, channels, size, size, requires_grad=True)
    offset = torch.randn(1, 2 * 9 * groups, size, size)
    mask = torch.rand(1, 9 * groups, size, size)
    weight = torch.randn(channels, channels, 3, 3)
    rows = []
    for be in ("torchvision", "gather", "grid"):
        def step():
            out = dcn.deform_conv2d(x, offset, weight, None, mask, 1, be)
            out.sum().backward()
        rows.append((be, best_of(step, repeat)))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--size", type=int, default=128)
    args = parser.parse_args()
    torch.set_num_threads(1)
    print(f"alignment kernels ({args.size}x{args.size}, best of {args.repeat}); default backend {_native.BACKEND}")
    for name, t in bench_kernels(args.size, args.repeat):
        cells = "  ".join(f"{be} {v * 1e3:8.2f} ms" for be, v in t.items())
        speedup = f"  x{t['numpy'] / t['cython']:.1f}" if "cython" in t else ""
        print(f"  {name:<22s} {cells}{speedup}")
    print(f"deformable conv forward+backward (C=32, G=4, {args.size // 2}x{args.size // 2})")
    for be, v in bench_dcn(args.size // 2, args.repeat):
        print(f"  {be:<12s} {v * 1e3:8.2f} ms")


if __name__ == "__main__":
    main()
