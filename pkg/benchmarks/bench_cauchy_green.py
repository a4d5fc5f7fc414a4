"""Timing of the zero-padded FFT Cauchy-Green transform against the direct sum.

    python3 benchmarks/bench_cauchy_green.py
"""

import sys
import time
from pathlib import Path

import numpy as np

from pascali_lab import CauchyGreenOperator, Grid, GridFunction

sys.path.insert(0, str(Path(__file__).parents[1] / "tests"))
from oracles import direct_cauchy_green  # noqa: E402


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    print(f"{'N':>5} {'fft [s]':>10} {'direct [s]':>11} {'rel. diff':>10}")
    for N in (16, 32, 64, 128, 256, 512):
        g = Grid(0, 1, N)
        dens = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        op = CauchyGreenOperator(g)
        gf = GridFunction(g, dens)
        t_fft = best_of(lambda: op(gf))
        if N <= 64:
            t_dir = best_of(lambda: direct_cauchy_green(g, dens), repeat=1)
            ref = direct_cauchy_green(g, dens)
            diff = np.abs(op(gf).values[..., 0] - ref).max() / np.abs(ref).max()
            print(f"{N:>5} {t_fft:>10.4f} {t_dir:>11.4f} {diff:>10.1e}")
        else:
            print(f"{N:>5} {t_fft:>10.4f} {'-':>11} {'-':>10}")


if __name__ == "__main__":
    main()
