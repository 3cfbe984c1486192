"""Time each hot kernel under the numpy and numba implementations.

Usage: python3 benchmarks/bench_kernels.py [--size 32] [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from stagesynth import _accel
from stagesynth.grid import RngStream, gaussian_taps


def kernel_args(size):
    rng = RngStream(0)
    f = [rng.normal((size, size)) for _ in range(5)]
    m0 = (f[4] > 0.5).astype(float)
    soft = 1.0 / (1.0 + np.exp(-f[3]))
    taps = gaussian_taps(3.0)
    return {
        "mixture_step": (m0, f[0], f[1], f[2], 0.4, 0.6, 0.05, f[3]),
        "blend_pair": (soft, f[0], f[1], m0, f[2]),
        "weight_excess": (f[0], f[1], soft),
        "separable_blur": (f[0], taps / taps.sum()),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()

    print(f"grid {args.size}x{args.size}, {args.repeat} calls per timing, active backend: {_accel.backend()}")
    print(f"{'kernel':<16}{'numpy us':>11}{'numba us':>11}{'speedup':>9}")
    for name, call_args in kernel_args(args.size).items():
        np_impl, nb_impl = _accel.IMPLEMENTATIONS[name]
        t_np = min(timeit.repeat(lambda: np_impl(*call_args), number=args.repeat, repeat=3))
        t_np = t_np / args.repeat * 1e6
        if nb_impl is None:
            print(f"{name:<16}{t_np:11.2f}{'n/a':>11}{'':>9}")
            continue
        nb_impl(*call_args)  # compile outside the timing
        t_nb = min(timeit.repeat(lambda: nb_impl(*call_args), number=args.repeat, repeat=3))
        t_nb = t_nb / args.repeat * 1e6
        print(f"{name:<16}{t_np:11.2f}{t_nb:11.2f}{t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
