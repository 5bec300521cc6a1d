"""Compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--scale 0.25] [--repeat 3]
"""
import argparse

from su2kam import bench, kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"backends: {', '.join(sorted(kernels.backends()))}")
    print(bench.format_rows(bench.run(args.scale, args.repeat, args.seed)))


if __name__ == "__main__":
    main()
