"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from avdub.kernels import backends


def cases(rng):
    x = rng.normal(size=(20000, 50))
    books = rng.normal(size=(4, 64, 50))
    labels = rng.integers(0, 64, size=20000)
    ref = rng.integers(0, 30, size=400)
    hyp = rng.integers(0, 30, size=400)
    return {
        "nearest_centroid 20000x64x50": lambda k: k.nearest_centroid(x, books[0]),
        "rvq_encode 20000x4x64x50": lambda k: k.rvq_encode(x, books),
        "accumulate_means 20000x50": lambda k: k.accumulate_means(x, labels, 64),
        "levenshtein 400x400": lambda k: k.levenshtein(ref, hyp),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = backends()
    rng = np.random.default_rng(0)
    names = sorted(impls)
    print(f"{'kernel':<32}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        best = {}
        for name in names:
            timer = timeit.Timer(lambda: fn(impls[name]))
            best[name] = min(timer.repeat(repeat=args.repeat, number=1)) * 1e3
        speed = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{label:<32}" + "".join(f"{best[n]:>16.2f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
