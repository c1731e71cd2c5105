"""Train Q-learning agents over several seeds and compare with the optimal policy.

Writes one learning-curve CSV per scheme and seed plus a summary table.

    python3 scripts/learning_vs_optimal.py --K 8 --seeds 0 1 2 3 4 --out results/learning
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from aoimac.config import LearnerConfig, ScenarioConfig, db_to_linear
from aoimac.mdp import NomaModel, OmaModel, constrained_solve
from aoimac.rl import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=8)
    ap.add_argument("--budget-db", type=float, default=0.0)
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--iterations", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--schemes", nargs="+", default=["oma", "noma"], choices=["oma", "noma"])
    ap.add_argument("--out", default="results/learning")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sc = ScenarioConfig(K=args.K, budget=db_to_linear(args.budget_db))
    cfg = LearnerConfig(iterations=args.iterations, episodes=args.episodes)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "seed", "age_learned", "age_optimal", "gap", "power_1", "power_2",
                    "constraint_1", "constraint_2", "runs"])
        for scheme in args.schemes:
            model = OmaModel(sc) if scheme == "oma" else NomaModel(sc)
            optimal = constrained_solve(model).report.weighted_age
            gaps = []
            for seed in args.seeds:
                rep = train(model, cfg, seed=seed)
                rep.write_curve(out / f"curve_{scheme}_seed{seed}.csv")
                gap = rep.eval_age / optimal - 1.0
                gaps.append(gap)
                w.writerow([scheme, seed, rep.eval_age, optimal, gap, *rep.eval_powers,
                            *model.constraints, rep.runs])
                print(f"{scheme} seed {seed}: learned {rep.eval_age:.4f}, optimal {optimal:.4f} "
                      f"({100 * gap:+.1f}%)", flush=True)
            print(f"{scheme}: median gap {100 * np.median(gaps):+.1f}%")


if __name__ == "__main__":
    main()
