"""Time every hot kernel under the numba and numpy backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call of each kernel includes JIT compilation (or cache
load), so it is done once as a warm-up before timing.
"""

import argparse
import timeit

import numpy as np

from gazescrnn import kernels
from gazescrnn._accel import HAVE_NUMBA, backend_scope


def cases():
    rng = np.random.default_rng(0)
    n, h, w = 200_000, 260, 346
    x = rng.integers(0, w, n)
    y = rng.integers(0, h, n)
    p = rng.integers(0, 2, n)
    frame = np.arange(n) // 1000
    xp = rng.standard_normal((4, 32, 67, 89))
    cols = kernels.im2col(xp, 3, 3, 1, 65, 87)
    pool_in = rng.standard_normal((4, 32, 130, 173))
    _, arg = kernels.maxpool_forward(pool_in, 2)
    g = rng.standard_normal((4, 32, 65, 86))
    log_i = kernels.render_log_intensity(170.0, 130.0, 18.0, 40.0, h, w)
    shifted = kernels.render_log_intensity(175.0, 131.0, 18.0, 40.0, h, w)
    return {
        "accumulate_events": lambda: kernels.accumulate_events(x, y, p, frame, 200, h, w),
        "im2col (loop vs strided)": {"numpy": lambda: kernels._im2col_np(xp, 3, 3, 1, 65, 87),
                                     "numba": lambda: kernels._im2col_nb(xp, 3, 3, 1, 65, 87)},
        "col2im": lambda: kernels.col2im(cols, 32, 67, 89, 3, 3, 1, 65, 87),
        "maxpool_forward": lambda: kernels.maxpool_forward(pool_in, 2),
        "maxpool_backward": lambda: kernels.maxpool_backward(g, arg, 2, 130, 173),
        "render_log_intensity": lambda: kernels.render_log_intensity(170.0, 130.0, 18.0, 40.0, h, w),
        "threshold_crossings": lambda: kernels.threshold_crossings(shifted, log_i.copy(), 0.2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    table = cases()
    print(f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name, fn in table.items():
        times = {}
        for b in backends:
            f = fn[b] if isinstance(fn, dict) else fn
            with backend_scope(b):
                f()
                times[b] = min(timeit.repeat(f, number=1, repeat=args.repeat))
        row = f"{name:24s}" + "".join(f"{times[b] * 1e3:11.2f} ms" for b in backends)
        if "numba" in times:
            row += f"   {times['numpy'] / times['numba']:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
