"""Time the compiled and pure-numpy kernel backends on representative sizes.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is called once
to trigger compilation, then timed as the best of ``--repeat`` runs.  The
script also reports the largest difference between the two backends.
"""

import argparse
import time

import numpy as np

from fracdisp import kernels
from fracdisp._accel import HAVE_NUMBA


def _best(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    m = 48
    table = rng.standard_normal((2 * m, 2 * m)) + 1j * rng.standard_normal((2 * m, 2 * m))
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    idx = np.stack([ii.ravel(), jj.ravel()], axis=1)
    yield "pair_gather 2304^2", lambda b: kernels.pair_gather(table, idx, periodic=True, backend=b)

    r = np.linspace(0.05, 6, 160)
    dd = 0.01
    tab = np.exp(-np.arange(0, 13, dd)).astype(complex)
    c, w = np.polynomial.legendre.leggauss(48)
    yield "angular_average 160^2 x 48", lambda b: kernels.angular_average(r, r, 0.0, dd, tab, c, w / 2, backend=b)

    coords = rng.uniform(-4, 4, size=(3000, 3))
    fw = rng.standard_normal(3000)
    yield "riesz_apply 3000 pts", lambda b: kernels.riesz_apply(coords, fw, 0.1, -1.5, 0.0, backend=b)

    mat = rng.standard_normal((400, 400)) + 1j * rng.standard_normal((400, 400))
    coef = np.exp(1j * np.linspace(0, 3, 20))

    def stone(b):
        acc = np.zeros((20, 400, 400), complex)
        kernels.stone_accumulate(acc, coef, mat, backend=b)
        return acc

    yield "stone_accumulate 20 x 400^2", stone


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}{'max diff':>12s}")
    for name, fn in cases(rng):
        times, outs = [], []
        for b in backends:
            t, out = _best(lambda: fn(b), args.repeat)
            times.append(t)
            outs.append(np.asarray(out))
        speed = times[0] / times[-1] if len(times) > 1 else float("nan")
        diff = float(np.max(np.abs(outs[0] - outs[-1]))) if len(outs) > 1 else 0.0
        print(f"{name:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times) + f"{speed:9.1f}x{diff:12.2e}")


if __name__ == "__main__":
    main()
