"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (so numba compile time is excluded) and the
best of ``--repeat`` runs is reported.  A solve of the bundled MD problem is
timed end to end with both paths.
"""
import argparse
import timeit

import numpy as np

from bankforge import _accel, kernels, problem
from bankforge.search import CandidateBudget, solve


def _find_point_case():
    # no feasible point: the whole 64^3 box is scanned
    lo = np.zeros(3, dtype=np.int64)
    size = np.full(3, 64, dtype=np.int64)
    coef1 = np.array([[2, 4, 6]])
    coef2 = np.zeros((1, 3), dtype=np.int64)
    return (lo, size, coef1, np.array([1]), coef2, np.array([0]), np.array([1]), np.array([0]))


def _collision_case(rng):
    n, m = 8, 200_000
    banks = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, m))
    return banks[rng.permutation(n)], 1


def _splits_case(rng):
    n, d = 581, 36
    X = rng.normal(size=(n, d))
    order = np.argsort(X, axis=0, kind="stable").T.copy()
    vals = np.take_along_axis(X.T, order, axis=1)
    return (vals, order, rng.normal(size=n), np.ones(n), rng.integers(0, 4, size=n), 4, 1.0, 0.0, 2)


def _best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _solve_md():
    prob = problem.load(problem.bundled("md_grid"))
    return lambda: solve(prob, CandidateBudget(duplication=()))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-solve", action="store_true", help="skip the end-to-end solve")
    args = ap.parse_args()
    if _accel.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    cases = {
        "find_point (262k-point box)": (kernels.find_point, _find_point_case()),
        "first_collision (8 x 200k)": (kernels.first_collision, _collision_case(rng)),
        "best_splits (581 x 36)": (kernels.best_splits, _splits_case(rng)),
    }
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fn, a) in cases.items():
        times = []
        for flag in (True, False):
            _accel.USE_NUMBA = flag
            times.append(_best(lambda: fn(*a), args.repeat))
        print(f"{name:34s} {times[0] * 1e3:10.2f} {times[1] * 1e3:10.2f} {times[1] / times[0]:7.1f}x")
    if not args.no_solve:
        run = _solve_md()
        times = []
        for flag in (True, False):
            _accel.USE_NUMBA = flag
            times.append(_best(run, 1))
        print(f"{'solve md_grid (end to end)':34s} {times[0] * 1e3:10.0f} {times[1] * 1e3:10.0f} "
              f"{times[1] / times[0]:7.1f}x")
    _accel.USE_NUMBA = True


if __name__ == "__main__":
    main()
