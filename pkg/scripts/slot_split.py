"""Grid search of the OMA slot split for a range of budget asymmetries.

    python3 scripts/slot_split.py --alphas 1 2 4 --out results/slot_split.csv
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from aoimac.config import ScenarioConfig
from aoimac.mdp import optimize_rho


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=16)
    ap.add_argument("--alphas", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    ap.add_argument("--step", type=float, default=0.05)
    ap.add_argument("--out", default="results/slot_split.csv")
    args = ap.parse_args()

    grid = np.round(np.arange(0.3, 0.7 + 1e-9, args.step), 4)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "rho", "weighted_age", "is_best"])
        for alpha in args.alphas:
            best, rows = optimize_rho(ScenarioConfig(K=args.K, alpha=alpha), grid)
            for rho, age in rows:
                w.writerow([alpha, rho, age, int(rho == best)])
            print(f"alpha {alpha:g}: rho* = {best:.2f}", flush=True)


if __name__ == "__main__":
    main()
