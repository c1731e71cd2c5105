"""OMA versus NOMA weighted age over the transmission rate at a fixed budget.

    python3 scripts/rate_crossover.py --budget-db 5 --out results/rate_crossover.csv
"""
import argparse
import csv
from pathlib import Path

from aoimac.config import ScenarioConfig, db_to_linear
from aoimac.mdp import NomaModel, OmaModel, constrained_solve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=16)
    ap.add_argument("--budget-db", type=float, default=5.0)
    ap.add_argument("--rates", type=float, nargs="+", default=[0.6, 1.0, 1.4, 1.8, 2.2])
    ap.add_argument("--out", default="results/rate_crossover.csv")
    args = ap.parse_args()

    base = ScenarioConfig(K=args.K, budget=db_to_linear(args.budget_db))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate", "age_oma", "age_noma", "better"])
        for R in args.rates:
            sc = base.replace(rate_bits=R)
            a = constrained_solve(OmaModel(sc)).report.weighted_age
            b = constrained_solve(NomaModel(sc)).report.weighted_age
            better = "oma" if a <= b else "noma"
            w.writerow([R, a, b, better])
            print(f"R={R:.1f}  oma {a:8.4f}  noma {b:8.4f}  -> {better}", flush=True)


if __name__ == "__main__":
    main()
