"""Time each hot kernel with numba against its numpy/scipy fallback.

    python benchmarks/bench_kernels.py [--repeats N]

The first numba call (compilation) is excluded from the timings.
"""

import argparse
import time

import numpy as np

from envvc import _kernels as K


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    n = 160_000  # one 10 s clip at 16 kHz
    x = rng.standard_normal(n)
    blocks = n // 32
    f = rng.uniform(200, 4000, (blocks, 1))
    bw = rng.uniform(60, 300, (blocks, 1))
    phase = np.cumsum(np.full(n, 2 * np.pi * 140 / 16000))
    offs = K.schroeder_offsets(54)
    emb = rng.standard_normal((500, 64))
    labels = np.repeat(np.arange(10), 50)
    return {
        "resonator (10 s, 1 formant)": lambda use: K.resonator_cascade(x, f, bw, 32, 16000, use_numba=use),
        "harmonic sum (10 s, 54 harmonics)": lambda use: K.harmonic_sum(phase, 54, offs, use_numba=use),
        "silhouette (500 x 64)": lambda use: K.silhouette_samples(emb, labels, use_numba=use),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    if not K.USE_NUMBA:
        print("numba unavailable or disabled (ENVVC_DISABLE_NUMBA); timing the fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<36} {'numba [ms]':>11} {'fallback [ms]':>14} {'speed-up':>9}")
    for name, fn in cases(rng).items():
        slow = best_of(lambda: fn(False), args.repeats)
        if K.USE_NUMBA:
            fn(True)  # compile
            fast = best_of(lambda: fn(True), args.repeats)
            np.testing.assert_allclose(fn(True), fn(False), rtol=1e-8, atol=1e-10)
            print(f"{name:<36} {1e3 * fast:>11.2f} {1e3 * slow:>14.2f} {slow / fast:>8.1f}x")
        else:
            print(f"{name:<36} {'-':>11} {1e3 * slow:>14.2f} {'-':>9}")


if __name__ == "__main__":
    main()
