"""Single-query latency of dual, RR and exhaustive cross search as the codebase grows.

    python scripts/bench_latency.py --sizes 1000,10000 --queries 100 --repeats 3 --out bench.csv
"""

from __future__ import annotations

import argparse

from codecascade.evaluation import BENCH_HEADER, MODES, bench_latency, write_csv
from codecascade.neural import ModelConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,10000")
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--modes", default=",".join(MODES))
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--out")
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    modes = args.modes.split(",")
    report = bench_latency(
        modes, sizes, n_queries=args.queries, repeats=args.repeats, k=args.k, model=ModelConfig(d=args.d)
    )
    if args.out:
        write_csv(args.out, BENCH_HEADER, report.rows)
    print(f"# {report.machine}")
    for r in report.rows:
        print(f"{r.mode:>16} N={r.size:>6}  median {r.median_ms:9.3f} ms  p95 {r.p95_ms:9.3f} ms")
    for mode in modes:
        print(f"{mode:>16} ratio {sizes[0]}->{sizes[-1]}: {report.ratio(mode, sizes[0], sizes[-1]):.2f}")


if __name__ == "__main__":
    main()
