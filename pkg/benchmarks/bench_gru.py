"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_gru.py [--repeat N]

Prints one line per (kernel, shape, dtype) with the best-of-N time of each
backend and the speed-up, and checks the two backends agree.
"""

import argparse
import timeit

import numpy as np

from rfclink.numerics import _kernels_py

try:
    from rfclink.numerics import _kernels
except ImportError:
    _kernels = None

SHAPES = [(10, 128), (64, 128), (64, 32), (200, 64)]


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def gru_case(m, h, dtype, repeat):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(m, 3 * h)).astype(dtype)
    u = (rng.normal(size=(h, 3 * h)) / np.sqrt(h)).astype(dtype)
    g = rng.normal(size=(m, h)).astype(dtype)
    out = {}
    for name, mod in (("python", _kernels_py), ("compiled", _kernels)):
        states, gates = mod.gru_forward(a, u)
        fwd = best(lambda: mod.gru_forward(a, u), repeat, 20)
        bwd = best(lambda: mod.gru_backward(a, u, states, gates, g), repeat, 20)
        out[name] = (fwd, bwd, states, mod.gru_backward(a, u, states, gates, g))
    diff = max(np.abs(out["python"][2] - out["compiled"][2]).max(),
               np.abs(out["python"][3][0] - out["compiled"][3][0]).max())
    return out, diff


def adam_case(n, dtype, repeat):
    rng = np.random.default_rng(1)
    times = {}
    for name, mod in (("python", _kernels_py), ("compiled", _kernels)):
        p = rng.normal(size=n).astype(dtype)
        g = rng.normal(size=n).astype(dtype)
        m = np.zeros(n, dtype)
        v = np.zeros(n, dtype)
        times[name] = best(lambda: mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
                           repeat, 5)
    return times


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    print(f"{'kernel':<14}{'shape':>12}{'dtype':>9}{'python ms':>12}{'compiled ms':>13}{'speed-up':>10}")
    for dtype in (np.float32, np.float64):
        for m, h in SHAPES:
            out, diff = gru_case(m, h, dtype, args.repeat)
            for i, kernel in enumerate(("gru_forward", "gru_backward")):
                py, cy = out["python"][i], out["compiled"][i]
                print(f"{kernel:<14}{f'{m}x{h}':>12}{np.dtype(dtype).name:>9}"
                      f"{py * 1e3:>12.3f}{cy * 1e3:>13.3f}{py / cy:>9.1f}x")
            tol = 1e-4 if dtype == np.float32 else 1e-10
            assert diff < tol, f"backends disagree by {diff:g}"
        t = adam_case(1_000_000, dtype, args.repeat)
        print(f"{'adam_update':<14}{'1e6':>12}{np.dtype(dtype).name:>9}"
              f"{t['python'] * 1e3:>12.3f}{t['compiled'] * 1e3:>13.3f}{t['python'] / t['compiled']:>9.1f}x")


if __name__ == "__main__":
    main()
