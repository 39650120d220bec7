"""Compare the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Timings are best-of-N wall clock after one warm-up call (which also pays
the JIT compile). Outputs are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from svhdr import kernels
from svhdr._accel import HAS_NUMBA


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    key = kernels.stream_key(1)
    lam_lo = rng.uniform(0, 10, 1_000_000)
    lam_hi = rng.uniform(10, 500, 1_000_000)
    fmap = rng.standard_normal((3, 64, 64, 48))
    ys = rng.uniform(-1, 64, (3, 64 * 64 * 9))
    xs = rng.uniform(-1, 64, (3, 64 * 64 * 9))
    gout = rng.standard_normal((3, 64 * 64 * 9, 48))
    return [
        ("poisson, lambda < 10 (1e6)", lambda: kernels.poisson_np(lam_lo, key),
         lambda: kernels.poisson_nb(lam_lo, key), np.array_equal),
        ("poisson, lambda >= 10 (1e6)", lambda: kernels.poisson_np(lam_hi, key),
         lambda: kernels.poisson_nb(lam_hi, key), np.array_equal),
        ("bilinear gather 3x64x64x48, 9 taps", lambda: kernels.bilinear_gather_np(fmap, ys, xs),
         lambda: kernels.bilinear_gather_nb(fmap, ys, xs), np.allclose),
        ("bilinear scatter 3x64x64x48, 9 taps", lambda: kernels.bilinear_scatter_np(fmap, ys, xs, gout),
         lambda: kernels.bilinear_scatter_nb(fmap, ys, xs, gout),
         lambda a, b: all(np.allclose(u, v) for u, v in zip(a, b))),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAS_NUMBA:
        raise SystemExit("numba unavailable (or SVHDR_DISABLE_NUMBA set); nothing to compare")
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, np_fn, nb_fn, same in cases():
        agree = same(np_fn(), nb_fn())
        t_np = best_of(np_fn, args.repeat)
        t_nb = best_of(nb_fn, args.repeat)
        print(f"{name:40s} {t_np * 1e3:10.1f} {t_nb * 1e3:10.1f} {t_np / t_nb:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
