"""Compare the numba-JIT kernels against their pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py

Run with PCR_NO_NUMBA=1 to confirm the dispatch flag, or as-is to see both
paths side by side (the JIT warm-up call is excluded from timings).
"""

import time

import numpy as np

from pcr import _kernels


def time_it(fn, *args, repeat=5, number=1):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            out = fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best, out


def bench_find_marker():
    rng = np.random.default_rng(0)
    n = 64 * 2**20
    buf = rng.integers(0, 256, n, dtype=np.uint8)
    # keep 0xFF rare and unstuffed-marker-free, like entropy data
    buf[buf == 0xFF] = 0xFE
    buf[-2:] = (0xFF, 0xD9)
    rows = []
    t_np, out_np = time_it(_kernels.find_marker_np, buf, 0)
    rows.append(("find_marker", "numpy", t_np, n / t_np / 2**20, out_np))
    if _kernels.USING_NUMBA:
        _kernels.find_marker_nb(buf, 0)  # warm up / compile
        t_nb, out_nb = time_it(_kernels.find_marker_nb, buf, 0)
        assert out_nb == out_np
        rows.append(("find_marker", "numba", t_nb, n / t_nb / 2**20, out_nb))
    return rows


def bench_filter_valid():
    rng = np.random.default_rng(1)
    img = np.ascontiguousarray(rng.random((512, 512)) * 255)
    k = np.ascontiguousarray(np.exp(-0.5 * ((np.arange(11) - 5) / 1.5) ** 2))
    k /= k.sum()
    px = img.size
    rows = []
    t_np, out_np = time_it(_kernels.filter_valid_np, img, k, number=3)
    rows.append(("filter_valid", "numpy", t_np, px / t_np / 1e6, None))
    if _kernels.USING_NUMBA:
        _kernels.filter_valid_nb(img, k)
        t_nb, out_nb = time_it(_kernels.filter_valid_nb, img, k, number=3)
        assert np.allclose(out_np, out_nb, rtol=1e-12)
        rows.append(("filter_valid", "numba", t_nb, px / t_nb / 1e6, None))
    return rows


def main():
    print(f"numba active: {_kernels.USING_NUMBA}")
    print(f"{'kernel':<14} {'path':<7} {'seconds':>10} {'throughput':>14}")
    for name, path, secs, thru, _ in bench_find_marker():
        print(f"{name:<14} {path:<7} {secs:>10.4f} {thru:>10.0f} MiB/s")
    for name, path, secs, thru, _ in bench_filter_valid():
        print(f"{name:<14} {path:<7} {secs:>10.4f} {thru:>10.1f} Mpx/s")


if __name__ == "__main__":
    main()
