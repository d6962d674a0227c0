"""Time the compiled popcount kernels against the numpy fallback.

Shapes follow the binary layers of AlexNet-HWGQ (ungrouped). An integer BLAS
matmul on the unpacked codes is listed as a reference point.

    python3 benchmarks/bench_kernels.py --k 2 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ifqnet import kernels
from ifqnet.kernels import fallback
from ifqnet.layout import pack_planes, pack_rows

SHAPES = {
    # name: (out channels, fan-in, output positions)
    "conv2": (256, 96 * 25, 27 * 27),
    "conv3": (384, 256 * 9, 13 * 13),
    "conv4": (384, 384 * 9, 13 * 13),
    "conv5": (256, 384 * 9, 13 * 13),
    "fc6": (4096, 256 * 36, 1),
    "fc7": (4096, 4096, 1),
}


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_layer(name, shape, k, repeat, rng):
    c, n, p = shape
    signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(c, n))
    codes = rng.integers(0, 1 << k, size=(p, n))
    words = pack_rows(signs > 0)
    planes = pack_planes(codes, k)
    levels = (1 << k) - 1
    thr = np.sort(rng.integers(-n, n, size=(c, levels)), axis=1)

    ref = kernels.binary_conv(words, planes)
    assert np.array_equal(ref, fallback.binary_conv(words, planes))
    t_cy = best_of(lambda: kernels.binary_conv(words, planes), repeat)
    t_py = best_of(lambda: fallback.binary_conv(words, planes), repeat)
    wf, xf = signs.astype(np.float32), codes.T.astype(np.float32)
    t_blas = best_of(lambda: wf @ xf, repeat)
    t_thr_cy = best_of(lambda: kernels.threshold_codes(ref, thr), repeat)
    t_thr_py = best_of(lambda: fallback.threshold_codes(ref, thr), repeat)
    return name, c, n, p, t_cy, t_py, t_blas, t_thr_cy, t_thr_py


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=2, help="activation bits")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--layers", nargs="*", default=list(SHAPES), choices=list(SHAPES))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    print(f"backend: {kernels.BACKEND}  k={args.k}  (best of {args.repeat}, milliseconds)")
    if kernels.BACKEND != "cython":
        print("note: compiled extension not loaded; both columns run the fallback")
    head = f"{'layer':<6} {'C':>5} {'n':>5} {'P':>4} {'popcnt':>9} {'numpy':>9} {'speedup':>8} {'blas':>8} {'thr':>7} {'thr_np':>7}"
    print(head)
    for name in args.layers:
        _, c, n, p, t_cy, t_py, t_blas, t_tc, t_tp = bench_layer(name, SHAPES[name], args.k, args.repeat, rng)
        print(f"{name:<6} {c:>5} {n:>5} {p:>4} {t_cy * 1e3:>9.2f} {t_py * 1e3:>9.2f} {t_py / t_cy:>7.1f}x "
              f"{t_blas * 1e3:>8.2f} {t_tc * 1e3:>7.2f} {t_tp * 1e3:>7.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
