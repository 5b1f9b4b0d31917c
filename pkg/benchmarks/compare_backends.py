"""Time the compiled kernel against the numpy fallback.

    python3 benchmarks/compare_backends.py [--reps 5] [--T 2] [--threads 1 4] [--json out.json]

Prints one line per (shape, backend, threads) and the python/compiled speedup.
"""
import argparse
import json
import sys

import numpy as np

from ugcp import backend
from ugcp.bench import bench, doubling_shapes


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--T", type=int, default=2)
    ap.add_argument("--threads", type=int, nargs="+", default=[1])
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    ap.add_argument("--json", help="also write the raw report here")
    args = ap.parse_args(argv)

    shapes = doubling_shapes((64, 64), 3) + doubling_shapes((32, 32, 32), 3)
    report = bench(shapes, T=args.T, reps=args.reps, backends=backend.available(),
                   threads=tuple(args.threads), dtype=np.dtype(args.dtype))
    print(f"{'shape':>16} {'backend':>9} {'threads':>7} {'median ms':>10}")
    for r in report["rows"]:
        print(f"{'x'.join(map(str, r['shape'])):>16} {r['backend']:>9} {r['threads']:>7} {1e3 * r['median_s']:>10.2f}")
    for s in report["speedup"]:
        print(f"speedup {'x'.join(map(str, s['shape']))}: {s['python_over_compiled']:.2f}x")
    if "compiled" not in backend.available():
        print("compiled kernel not built; only the fallback was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)


if __name__ == "__main__":
    main()
