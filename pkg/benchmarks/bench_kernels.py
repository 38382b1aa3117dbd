"""Compare the compiled and pure-Python gaze kernels.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from gazefocal import kernels
from gazefocal.hva import gaussian_kernel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    kernel = gaussian_kernel(8.0)
    padded = rng.random((args.size, args.size + len(kernel) - 1))
    mask = rng.random((args.size, args.size)) < 0.45

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the fallback is timed")
    cases = {
        "correlate_rows": lambda mod: mod.correlate_rows(padded, kernel),
        "label_components": lambda mod: mod.label_components(mask, 8),
    }
    print(f"{'kernel':<18}{'backend':<10}{'best ms':>10}")
    for name, call in cases.items():
        times = {}
        for backend, mod in backends.items():
            times[backend] = min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<18}{backend:<10}{times[backend]:>10.2f}")
        if len(times) == 2:
            print(f"{'':<18}{'speedup':<10}{times['python'] / times['cython']:>9.1f}x")


if __name__ == "__main__":
    main()
