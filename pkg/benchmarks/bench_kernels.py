"""Time the compiled and pure-Python kernels on the same inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, size) with the best time per call for each
available backend and the speed-up of the compiled one.
"""
import argparse
import timeit

import numpy as np

from dcdgd import _backend


def jacobi_case(n):
    rng = np.random.default_rng(n)
    M = rng.standard_normal((n, n))
    A = (M + M.T) / 2
    return lambda k: k.jacobi_eigh(A)


def greedy_case(d):
    mags = np.sort(np.abs(np.random.default_rng(d).standard_normal(d)) + 1e-3)[::-1]
    return lambda k: k.greedy_groups(mags, 2.0, 32.0, 3.0, 32 * 2 / 3 + 2 / 3)


def bits_case(count):
    rng = np.random.default_rng(count)
    widths = rng.integers(1, 33, count).tolist()
    values = [int(rng.integers(0, 2 ** w)) for w in widths]
    nbits = sum(widths)

    def run(k):
        w = k.BitWriter()
        for v, width in zip(values, widths):
            w.write(v, width)
        r = k.BitReader(w.getvalue(), nbits)
        for width in widths:
            r.read(width)

    return run


CASES = [
    ("jacobi_eigh", "n", (10, 40), jacobi_case),
    ("greedy_groups", "d", (100, 1000), greedy_case),
    ("bit writer+reader", "fields", (1000, 10000), bits_case),
]


def best_time(fn, kern, repeat):
    number = 1
    while timeit.timeit(lambda: fn(kern), number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(lambda: fn(kern), number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = _backend.available_backends()
    print("backends: " + ", ".join(k.NAME for k in backends) + f" (active: {_backend.BACKEND})")
    for name, label, sizes, make in CASES:
        for size in sizes:
            fn = make(size)
            times = {k.NAME: best_time(fn, k, args.repeat) for k in backends}
            parts = [f"{b} {t * 1e3:9.3f} ms" for b, t in times.items()]
            if len(times) == 2:
                parts.append(f"speed-up {times['python'] / times['cython']:6.1f}x")
            print(f"{name:18s} {label}={size:<6d} " + "  ".join(parts))


if __name__ == "__main__":
    main()
