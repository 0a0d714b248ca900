"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best of ``repeat`` timings per backend and the speedup.
Results are also checked for bit-identity, since both backends must agree.
"""

import argparse
import timeit

import numpy as np

from mpvc import _backend
from mpvc.linalg import LinearProgram, lp_solve, rank_with_tol


def _lp(rng, n=30, m=25):
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    return LinearProgram(c=rng.integers(-2, 5, n).astype(float), A_le=A, b_le=rng.integers(1, 10, m).astype(float), ub=np.full(n, 5.0))


def cases(rng):
    lps = [_lp(rng) for _ in range(20)]
    mats = [rng.integers(-3, 4, size=(40, 40)).astype(float) @ np.diag(rng.integers(0, 2, 40)) for _ in range(20)]
    a, b = rng.standard_normal(200_000), rng.standard_normal(200_000)
    return {
        "simplex (20 LPs, 25x30)": (lambda k: [lp_solve(lp, kernels=k) for lp in lps], lambda r: [(o.status, None if o.x is None else o.x.tobytes()) for o in r]),
        "echelon rank (20 x 40x40)": (lambda k: [rank_with_tol(M, kernels=k) for M in mats], lambda r: r),
        "dist to Delta (2e5 pairs)": (lambda k: k.delta_dist_l1(a, b), lambda r: np.asarray(r).tobytes()),
        "phi terms (2e5 pairs)": (lambda k: k.phi_terms(a, b), lambda r: np.asarray(r).tobytes()),
        "projection onto Omega (2e5)": (lambda k: k.project_omega(a, b), lambda r: b"".join(np.asarray(v).tobytes() for v in r)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _backend.compiled_kernels is None:
        print("compiled kernels are not built; only the numpy backend is available")
        return
    rng = np.random.default_rng(0)
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    print(f"{'kernel':30s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}  identical")
    for name, (fn, key) in cases(rng).items():
        same = key(fn(py)) == key(fn(cy))
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:30s} {t_py:11.2f} {t_cy:12.2f} {t_py / t_cy:8.1f}  {same}")


if __name__ == "__main__":
    main()
