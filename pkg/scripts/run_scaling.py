"""Runtime of both pooling kernels against image size and superpixel count.

    python3 scripts/run_scaling.py --out results/scaling
"""

import argparse
import os

from spxpool.bench import BenchConfig, bench_run, linear_fit_r2, spread_ratio, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/scaling")
    ap.add_argument("--mode", choices=("max", "avg"), default="max")
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--channels", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    sizes = tuple(2 ** e for e in range(18, 25))
    ks = (100, 316, 1000, 3162, 10000)
    p_rows = bench_run(BenchConfig(sizes, (1000,), args.channels, args.repeats, args.mode, "both", args.seed))
    k_rows = bench_run(BenchConfig((2 ** 22,), ks, args.channels, args.repeats, args.mode, "both", args.seed))
    write_csv(p_rows, os.path.join(args.out, f"p_sweep_{args.mode}.csv"))
    write_csv(k_rows, os.path.join(args.out, f"k_sweep_{args.mode}.csv"))

    for kernel in ("serial", "parallel"):
        p_sel = [r for r in p_rows if r.kernel == kernel]
        k_sel = [r.median_s for r in k_rows if r.kernel == kernel]
        r2 = linear_fit_r2([r.P for r in p_sel], [r.median_s for r in p_sel])
        print(f"{kernel:8s} R^2 over P: {r2:.4f}   max/min over K: {spread_ratio(k_sel):.2f}")


if __name__ == "__main__":
    main()
