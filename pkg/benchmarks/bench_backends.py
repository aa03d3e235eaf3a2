#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-Python fallback.

Times each hot kernel (pairwise row sums, self sum, streamed WSPD pair sums
and the batched alignment objective) under both backends and prints a CSV
table with the speedup over the fallback and the largest absolute
difference between the two results.

    python benchmarks/bench_backends.py --sizes 500,1000,2000 --repeats 3
"""
from __future__ import annotations

import argparse
import csv
import sys

from kerneldist import _backend
from kerneldist.bench import BACKEND_COLUMNS, backends


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="500,1000", help="comma separated point counts")
    ap.add_argument("--repeats", type=int, default=3, help="best-of repeats per timing")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default=None, help="CSV path (default stdout)")
    args = ap.parse_args(argv)

    if "compiled" not in _backend.available_backends():
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    _backend.set_num_threads(args.threads)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = backends(sizes=sizes, seed=args.seed, repeats=args.repeats)

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    wr = csv.DictWriter(fh, fieldnames=BACKEND_COLUMNS, lineterminator="\n")
    wr.writeheader()
    wr.writerows(rows)
    if args.out:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
