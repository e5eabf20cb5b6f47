"""Normalized distances as the grid (M) and the Galerkin mesh (N) are refined."""

import argparse
import json
import time
from pathlib import Path

from tacmix.experiments import consistency_runs, median_by, square_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=7, help="episodes per dataset")
    ap.add_argument("--M-values", default="25,100,225,400")
    ap.add_argument("--N-values", default="4,16,64,128")
    ap.add_argument("--fixed-M", type=int, default=400)
    ap.add_argument("--fixed-N", type=int, default=128)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/refinement")
    args = ap.parse_args()

    start = time.perf_counter()
    seeds = range(args.seeds)
    by_M = [r for M in map(int, args.M_values.split(",")) for s in seeds
            for r in consistency_runs((args.m,), s, square_grid(M), args.fixed_N, threads=args.threads)]
    by_N = [r for N in map(int, args.N_values.split(",")) for s in seeds
            for r in consistency_runs((args.m,), s, square_grid(args.fixed_M), N, threads=args.threads)]
    dm = median_by(by_M, "M", "D_bar_M")
    dn = median_by(by_N, "n_mesh", "D_bar_N")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table_M.csv", "w") as fh:
        fh.write("M,D_bar_M\n" + "".join(f"{k},{v!r}\n" for k, v in dm.items()))
    with open(out / "table_N.csv", "w") as fh:
        fh.write("N,D_bar_N\n" + "".join(f"{k},{v!r}\n" for k, v in dn.items()))
    doc = {"m": args.m, "seconds": time.perf_counter() - start,
           "by_M": [r.to_dict() for r in by_M], "by_N": [r.to_dict() for r in by_N]}
    (out / "runs.json").write_text(json.dumps(doc, indent=2) + "\n")

    print(f"N={args.fixed_N}:  " + "  ".join(f"M={k}: {v:.5f}" for k, v in dm.items()))
    print(f"M={args.fixed_M}:  " + "  ".join(f"N={k}: {v:.5f}" for k, v in dn.items()))
    for name, vals in (("D_bar_M", list(dm.values())), ("D_bar_N", list(dn.values()))):
        ok = all(b <= a for a, b in zip(vals, vals[1:]))
        print(f"{name} nonincreasing: {'PASS' if ok else 'FAIL'}")


if __name__ == "__main__":
    main()
