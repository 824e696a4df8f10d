"""Time the O(N^2) interaction kernels under both compute backends.

Runs each kernel at several particle counts with the compiled (numba) and
the blocked-numpy implementation, reports best-of-k wall times plus their
ratio, and cross-checks that the two backends agree to near machine
precision (they use different summation orders, so bitwise equality is not
expected).

    python3 benchmarks/bench_kernels.py --sizes 512 2048 8192 --repeats 3
"""

import argparse
import time

import numpy as np

from vppc import backend, kernels


def _bench(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _rel_diff(a, b):
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    scale = np.max(np.abs(a)) or 1.0
    return float(np.max(np.abs(a - b)) / scale)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[512, 2048, 8192])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    if not backend.HAVE_NUMBA:
        parser.error("numba is not importable; nothing to compare against")

    rng = np.random.default_rng(args.seed)
    header = f"{'kernel':<16}{'N':>8}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>9}{'rel diff':>11}"
    print(header)
    print("-" * len(header))
    worst = 0.0
    for n in args.sizes:
        pos = rng.normal(size=(n, 3))
        w = rng.uniform(0.5, 1.5, size=n)
        targets = rng.normal(size=(n // 2, 3)) * 3.0
        nodes = rng.normal(size=(n // 2, 3)) * 8.0 + 20.0  # far from sources
        cases = [
            ("field_self", kernels.field_self, (pos, w, 1.0e-4)),
            ("field_direct", kernels.field_direct, (targets, pos, w, 1.0e-4)),
            ("pair_potential", kernels.pair_potential, (pos, w, 1.0e-4)),
            ("kernel_sum", kernels.kernel_sum, (nodes, pos, w)),
        ]
        for name, fn, fargs in cases:
            backend.set_backend("numba")
            fn(*fargs)  # compile before timing
            t_nb, out_nb = _bench(fn, fargs, args.repeats)
            backend.set_backend("numpy")
            t_np, out_np = _bench(fn, fargs, args.repeats)
            diff = _rel_diff(out_nb, out_np)
            worst = max(worst, diff)
            print(f"{name:<16}{n:>8}{t_nb:>12.4f}{t_np:>12.4f}"
                  f"{t_np / t_nb:>9.1f}{diff:>11.1e}")
    backend.set_backend("auto")
    print(f"\nworst backend disagreement: {worst:.2e} (relative)")
    if worst > 1.0e-10:
        raise SystemExit("backends disagree beyond summation-order noise")


if __name__ == "__main__":
    main()
