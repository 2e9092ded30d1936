"""Time the compiled kernels against their numpy fallback on typical psi evaluations.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from vecparisi import kernels
from vecparisi.cascade import SpinLaw, grad_psi, psi_grid
from vecparisi.paths import StepPath

CASES = {
    "psi d=1 K=3": (lambda: psi_grid, StepPath(np.array([0.2, 0.5, 0.8]), np.array([[[0.1]], [[0.3]], [[0.6]], [[1.0]]])), 1),
    "grad d=1 K=3": (lambda: grad_psi, StepPath(np.array([0.2, 0.5, 0.8]), np.array([[[0.1]], [[0.3]], [[0.6]], [[1.0]]])), 1),
    "psi d=2 K=2": (lambda: psi_grid, StepPath(np.array([0.3, 0.6]), np.array(
        [np.diag([0.1, 0.1]), [[0.4, 0.1], [0.1, 0.3]], [[0.8, 0.2], [0.2, 0.7]]])), 2),
    "grad d=2 K=1": (lambda: grad_psi, StepPath(np.array([0.5]), np.array(
        [np.diag([0.2, 0.1]), [[0.6, 0.1], [0.1, 0.5]]])), 2),
}


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    before = kernels.BACKEND
    print(f"{'case':<16}{'compiled s':>12}{'python s':>12}{'speedup':>10}{'|diff|':>12}")
    try:
        for name, (get, q, dim) in CASES.items():
            fn, law = get(), SpinLaw.ising(dim)
            timing, values = {}, {}
            for backend in ("compiled", "python"):
                kernels.use_backend(backend)
                values[backend] = np.asarray(fn(q, law))
                timing[backend] = best_time(lambda: fn(q, law), args.repeat)
            diff = float(np.max(np.abs(values["compiled"] - values["python"])))
            print(f"{name:<16}{timing['compiled']:>12.4f}{timing['python']:>12.4f}"
                  f"{timing['python'] / timing['compiled']:>10.1f}{diff:>12.1e}")
    finally:
        kernels.use_backend(before)


if __name__ == "__main__":
    main()
