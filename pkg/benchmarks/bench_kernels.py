"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each case runs both backends on the same inputs, checks that they agree and
reports the best-of-N wall time per call.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from protoalign.kernels import available_backends, load_backend


def _unit(rng, n, d):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def cases(rng):
    # alignment batch at the training shape, and a larger one
    for B, C, D in ((16, 4, 16), (256, 8, 64)):
        prior = rng.random(C) + 0.1
        args = (rng.normal(size=(B, D)), _unit(rng, C, D), prior / prior.sum(), 0.1)
        yield f"pfa_terms B={B} C={C} D={D}", "pfa_terms", args
    # contrastive batch at the training shape (K*C queries, N negatives)
    for Q, N, D in ((64, 256, 16), (256, 256, 16)):
        pool = _unit(rng, 128, D)
        args = (rng.normal(size=(Q, D)), _unit(rng, Q, D), pool,
                rng.integers(0, 128, size=(Q, N)), 0.1)
        yield f"cl_terms Q={Q} N={N} D={D}", "cl_terms", args
    # boundary distances of two ~100x100 masks
    for n in (400, 1600):
        args = (rng.random((n, 2)) * 100, rng.random((n, 2)) * 100)
        yield f"nearest_distances {n}x{n}", "nearest_distances", args


def _agree(a, b) -> float:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    backends = {name: load_backend(name) for name in available_backends()}
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available", file=sys.stderr)
    rows = []
    for label, fn, inputs in cases(np.random.default_rng(0)):
        row = {"case": label}
        outs = {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            outs[name] = f(*inputs)
            number = max(1, int(0.2 / max(timeit.timeit(lambda: f(*inputs), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: f(*inputs), number=number, repeat=args.repeat))
            row[f"{name}_us"] = 1e6 * best / number
        if len(outs) == 2:
            row["max_abs_diff"] = _agree(outs["cython"], outs["python"])
            row["speedup"] = row["python_us"] / row["cython_us"]
        rows.append(row)

    print(f"{'case':<32} {'python us':>11} {'cython us':>11} {'speedup':>8} {'max diff':>10}")
    for r in rows:
        print(f"{r['case']:<32} {r.get('python_us', float('nan')):>11.1f} "
              f"{r.get('cython_us', float('nan')):>11.1f} {r.get('speedup', float('nan')):>8.2f} "
              f"{r.get('max_abs_diff', float('nan')):>10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
