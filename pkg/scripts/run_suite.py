"""Run a benchmark suite and print a Detect-fail / Failure table.

    python3 scripts/run_suite.py scripts/stress_suite.json --out stress
"""

import argparse
import time

from rcme import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("suite")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="write <out>.json and <out>.csv")
    args = ap.parse_args()

    suite = bench.load_suite(args.suite)
    if args.workers > 1:
        from dataclasses import replace
        suite = replace(suite, workers=args.workers)
    t0 = time.perf_counter()
    report = bench.run_benchmark(suite)
    wall = time.perf_counter() - t0

    print(f"{'config':<16}{'variant':<10}{'DF %':>8}{'F %':>8}{'DF+F':>7}")
    for row in report.rows:
        for v in suite.variants:
            df, fl = row[f"{v}_detect_fail"], row[f"{v}_failure"]
            print(f"{row['config']:<16}{v:<10}{row[f'{v}_detect_fail_pct']:>8.2f}"
                  f"{row[f'{v}_failure_pct']:>8.2f}{df + fl:>7d}")
    print(f"wall time {wall:.1f}s")
    if args.out:
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json(timing=True))
        with open(args.out + ".csv", "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())


if __name__ == "__main__":
    main()
