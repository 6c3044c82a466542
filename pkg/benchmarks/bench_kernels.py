"""Compiled versus numpy random kernels: throughput and agreement.

    python benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from frida.numcore import _kernels_py

try:
    from frida.numcore import _kernels as _compiled
except ImportError:
    _compiled = None

KEY = 0x243F6A8885A308D3


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=1_000_000, help="values per call")
    p.add_argument("--repeat", type=int, default=5, help="timed calls per kernel (best is kept)")
    args = p.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':<14}{'compiled ms':>12}{'python ms':>12}{'speedup':>9}  agreement")
    for name in ("random_words", "uniform_fill", "normal_fill"):
        fc, fp = getattr(_compiled, name), getattr(_kernels_py, name)
        tc = min(timeit.repeat(lambda: fc(KEY, 7, args.n), number=1, repeat=args.repeat))
        tp = min(timeit.repeat(lambda: fp(KEY, 7, args.n), number=1, repeat=args.repeat))
        a, b = np.asarray(fc(KEY, 7, args.n)), np.asarray(fp(KEY, 7, args.n))
        if name == "normal_fill":
            agree = f"max |diff| {np.max(np.abs(a - b)):.1e}"
        else:
            agree = "identical" if np.array_equal(a, b) else "DIFFERENT"
        print(f"{name:<14}{tc * 1e3:>12.2f}{tp * 1e3:>12.2f}{tp / tc:>8.1f}x  {agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
