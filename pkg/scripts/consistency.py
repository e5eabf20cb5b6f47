"""Median D against the Beta(2,5)^2 truth as the number of episodes grows.

Default sizes are the desk scale (M=400, N=128, 5 seeds); pass --M 100
--n-mesh 64 for the quick version.
"""

import argparse
import json
import time
from pathlib import Path

from tacmix.experiments import consistency_runs, median_by, square_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=400)
    ap.add_argument("--n-mesh", type=int, default=128)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--m-values", default="1,3,7,9,16,42")
    ap.add_argument("--mode", default="cdf", choices=("cdf", "cell-mass"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/consistency")
    args = ap.parse_args()

    m_values = tuple(int(v) for v in args.m_values.split(","))
    grid = square_grid(args.M)
    start = time.perf_counter()
    records = []
    for seed in range(args.seeds):
        records += consistency_runs(m_values, seed, grid, args.n_mesh, mode=args.mode, threads=args.threads)
        print(f"seed {seed} done ({time.perf_counter() - start:.0f}s)", flush=True)
    med = median_by(records, "m")
    elapsed = time.perf_counter() - start

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w") as fh:
        fh.write("m,D\n")
        for m, d in med.items():
            fh.write(f"{m},{d!r}\n")
    doc = {"M": args.M, "N": args.n_mesh, "seeds": args.seeds, "mode": args.mode, "seconds": elapsed,
           "median_D": {str(k): v for k, v in med.items()}, "runs": [r.to_dict() for r in records]}
    (out / "runs.json").write_text(json.dumps(doc, indent=2) + "\n")

    print(f"\n   m  median D   (M={args.M}, N={args.n_mesh}, {args.seeds} seeds, {elapsed:.0f}s)")
    for m, d in med.items():
        print(f"{m:4d}  {d:8.4f}")
    if {1, 7, 16, 42} <= med.keys():
        ok = med[42] < med[16] < med[7] and med[42] < 0.25 * med[1]
        print("trend check:", "PASS" if ok else "FAIL")


if __name__ == "__main__":
    main()
