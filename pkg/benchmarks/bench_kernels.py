"""Time the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat R]
"""

import argparse
import timeit

import numpy as np

from stochsqp import _pykernels, stepcore
from stochsqp._backend import available_backends
from stochsqp.problems import load_dataset


def cases(rng):
    out = []
    for m, n in ((5, 20), (20, 50), (60, 200)):
        J = rng.standard_normal((m, n))
        c = rng.standard_normal(m)
        Q = stepcore.range_split(J).range_basis
        rhs = rng.standard_normal(n)
        rhs -= Q @ (Q.T @ rhs)
        out.append((f"normal_cg {m}x{n}", lambda k, J=J, c=c, m=m: k.normal_cg(J, c, 1e3, min(m, 20), 1e-14)))
        out.append((f"projected_cg {m}x{n}", lambda k, Q=Q, rhs=rhs, n=n: k.projected_cg(None, Q, rhs, 1e-10, n)))
    data = load_dataset("australian")
    X = np.ascontiguousarray(data.features.toarray())
    y = np.ascontiguousarray(data.labels, dtype=float)
    w = rng.standard_normal(X.shape[1])
    for b in (16, 128):
        rows = np.ascontiguousarray(rng.choice(X.shape[0], b, replace=False), dtype=np.intp)
        out.append((f"logistic_grad batch {b}", lambda k, rows=rows: k.logistic_grad_rows(X, y, w, rows)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the NumPy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases(rng):
        times = {}
        for name, mod in backends.items():
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, number)) / number
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<26}" + "".join(f"{times[k] * 1e6:>12.1f}us" for k in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
