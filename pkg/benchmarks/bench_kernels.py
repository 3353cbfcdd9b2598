"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import importlib
import timeit

import numpy as np

from hflprune import _pure


def cases(rng):
    for devices, weights in ((5, 12_000), (25, 12_000), (5, 250_000)):
        stack = rng.normal(size=(devices, weights))
        masks = (rng.random((devices, weights)) < 0.6).astype(np.uint8)
        previous = rng.normal(size=weights)
        yield f"masked_average {devices}x{weights}", "masked_average", (stack, masks, previous)
    for n in (5, 25, 200):
        v4 = np.full(n, 64.0 * 1e4)
        v3 = rng.uniform(0.005, 0.05, n)
        snr = 20e6 * np.log2(1 + 10 ** (rng.uniform(0, 3, n)))
        coef = 0.03 * v4
        yield f"bisect_lambda n={n}", "bisect_lambda", (coef, snr, v3, v4)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    try:
        compiled = importlib.import_module("hflprune._kernels")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for label, name, call_args in cases(rng):
        times = []
        for impl in (_pure, compiled):
            if impl is None:
                times.append(float("nan"))
                continue
            fn = getattr(impl, name)
            timer = timeit.Timer(lambda: fn(*call_args))
            loops, _ = timer.autorange()
            best = min(timer.repeat(repeat=args.repeat, number=loops)) / loops
            times.append(best * 1e6)
        print(f"{label:<34}{times[0]:>14.1f}{times[1]:>14.1f}{times[0] / times[1]:>9.1f}x")


if __name__ == "__main__":
    main()
