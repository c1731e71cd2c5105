"""Command-line driver: ``aoimac {solve,train,simulate,sweep,validate-config}``.

Exit codes: 0 success, 1 configuration error, 2 numerical or convergence
failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, SimConfig
from .mdp import (
    DeterministicPolicy,
    InfeasibleBudget,
    MixedPolicy,
    build_model,
    constrained_solve,
    fixed_power_solve,
    write_policy_csv,
)
from .rl import DivergentQ, train
from .sim import SimulationAborted, run_sim

log = logging.getLogger("aoimac")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

RESULT_COLUMNS = ("scheme", "budget_db", "rho", "alpha", "rate", "age_theory", "age_sim",
                  "power_1", "power_2", "beta_1", "beta_2", "xi_1", "xi_2", "seed",
                  "runtime", "status")


class NumericFailure(RuntimeError):
    pass


NUMERIC_ERRORS = (NumericFailure, DivergentQ, SimulationAborted, InfeasibleBudget,
                  FloatingPointError, np.linalg.LinAlgError)


# ---------------------------------------------------------------------------
# helpers


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _solve(exp: ExperimentConfig, scheme: str, fixed: bool = False):
    model = build_model(exp.scenario(scheme), scheme)
    sol = fixed_power_solve(model, exp.solver) if fixed else constrained_solve(model, exp.solver)
    return model, sol


def _sim_policy(exp: ExperimentConfig, model, sol):
    """The policy ``sim.policy`` asks for."""
    kind = exp.raw["sim"]["policy"]
    if kind == "mixed":
        return sol.policy
    if kind == "deterministic":
        return sol.policy.plus
    if kind == "fixed-power":
        return fixed_power_solve(model, exp.solver).policy
    k = int(exp.raw["sim"]["fixed_index"])
    if model.scheme == "oma":
        if not 0 <= k < len(model.actions[0]):
            raise ConfigError(f"sim.fixed_index {k} outside 0..{len(model.actions[0]) - 1}")
        return DeterministicPolicy("oma", np.full((model.n_sources, model.space.size), k),
                                   model.actions)
    n_joint = len(model.actions)
    if not 0 <= k < n_joint:
        raise ConfigError(f"sim.fixed_index {k} outside 0..{n_joint - 1}")
    return DeterministicPolicy("noma", np.full(model.space.size ** 2, k), model.actions)


def _pad2(values, fill=None):
    v = [float(x) for x in values][:2]
    return v + [fill] * (2 - len(v))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(exp: ExperimentConfig, args) -> int:
    print(exp.to_json())
    return EXIT_OK


def cmd_solve(exp: ExperimentConfig, args) -> int:
    out = Path(args.out)
    scheme = exp.scheme
    model, sol = _solve(exp, scheme)
    rep = sol.report
    _write_json(out / f"solve_{scheme}.json", rep.to_dict())
    write_policy_csv(out / f"policy_{scheme}_minus.csv", model, sol.policy.minus)
    write_policy_csv(out / f"policy_{scheme}_plus.csv", model, sol.policy.plus)
    log.info("%s: weighted age %.6f, powers %s, status %s", scheme, rep.weighted_age,
             np.round(rep.powers, 6).tolist(), rep.status)
    if not rep.converged:
        log.error("solver did not converge (residual %.3g)", rep.residual)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_train(exp: ExperimentConfig, args) -> int:
    out = Path(args.out)
    scheme = exp.scheme
    model = build_model(exp.scenario(scheme), scheme)
    rep = train(model, exp.learner, seed=exp.seed)
    _write_json(out / f"train_{scheme}.json", rep.to_dict())
    rep.write_curve(out / f"curve_{scheme}.csv")
    log.info("%s: greedy weighted age %.4f, powers %s, runs %d", scheme, rep.eval_age,
             np.round(rep.eval_powers, 4).tolist(), rep.runs)
    if not rep.converged:
        log.error("run-to-run age change never fell below gamma_delta")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(exp: ExperimentConfig, args) -> int:
    out = Path(args.out)
    scheme = exp.scheme
    model, sol = _solve(exp, scheme)
    policy = _sim_policy(exp, model, sol)
    sim_cfg = exp.sim
    metrics = run_sim(model, policy, sim_cfg)
    data = metrics.to_dict()
    data["seed"] = sim_cfg.seed
    data["policy"] = exp.raw["sim"]["policy"]
    if isinstance(policy, MixedPolicy) and policy is sol.policy:
        data["theory_weighted_age"] = sol.report.weighted_age
    _write_json(out / f"sim_{scheme}.json", data)
    if sim_cfg.trace:
        metrics.write_trace(out / f"trace_{scheme}.csv")
    log.info("%s: simulated weighted age %.6f over %d slots", scheme, metrics.weighted_age,
             metrics.slots)
    return EXIT_OK


def sweep_points(exp: ExperimentConfig) -> list[tuple[dict, str, int]]:
    """Cartesian product of axes x schemes x seeds, in a fixed order."""
    sweep = exp.raw["sweep"]
    axes = sweep["axes"]
    schemes = sweep["schemes"] or [f"{exp.scheme}-opt"]
    seeds = sweep["seeds"] if sweep["seeds"] is not None else [exp.seed]
    points = []
    for values in itertools.product(*(a["values"] for a in axes)):
        point = exp
        for axis, value in zip(axes, values):
            point = point.with_value(axis["path"], value)
        for label in schemes:
            for seed in seeds:
                points.append((point.raw, label, int(seed)))
    return points


def run_point(raw: dict, label: str, seed: int) -> dict:
    """Evaluate one sweep point; failures are reported in ``status``."""
    t0 = time.perf_counter()
    scheme, kind = label.split("-")
    exp = ExperimentConfig(raw)
    sc = exp.scenario(scheme)
    row = {
        "scheme": label,
        "budget_db": float(raw["scenario"]["budget_db"]),
        "rho": sc.rho[0] if scheme == "oma" else None,
        "alpha": sc.alpha,
        "rate": sc.rate_bits,
        "seed": seed,
    }
    try:
        model, sol = _solve(exp, scheme, fixed=kind == "fixed")
        rep = sol.report
        row["age_theory"] = rep.weighted_age
        row["beta_1"], row["beta_2"] = _pad2(rep.beta_plus)
        row["xi_1"], row["xi_2"] = _pad2(rep.xi)
        if kind == "rl":
            trep = train(model, exp.learner, seed=seed)
            row["age_sim"] = trep.eval_age
            row["power_1"], row["power_2"] = _pad2(trep.eval_powers)
            row["beta_1"], row["beta_2"] = _pad2(trep.betas)
            row["xi_1"] = row["xi_2"] = None
            ok = trep.converged
        else:
            slots = int(exp.raw["sim"]["slots"])
            m = run_sim(model, sol.policy, SimConfig(slots=slots, seed=seed))
            row["age_sim"] = m.weighted_age
            row["power_1"], row["power_2"] = _pad2(m.avg_power)
            ok = rep.converged
        row["status"] = "ok" if ok else "not-converged"
    except NUMERIC_ERRORS as err:
        row["status"] = f"failed: {type(err).__name__}: {err}"
    # wall-clock time breaks byte-for-byte reproducibility; output.timing=false zeroes it
    row["runtime"] = time.perf_counter() - t0 if raw["output"]["timing"] else 0.0
    return {c: row.get(c) for c in RESULT_COLUMNS}


def _run_point(args):
    return run_point(*args)


def _cell(v):
    """Not-applicable fields are empty; floats keep full precision."""
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else v


def write_rows(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in RESULT_COLUMNS])


def cmd_sweep(exp: ExperimentConfig, args) -> int:
    if not exp.raw["sweep"]["axes"]:
        raise ConfigError("sweep needs at least one axis")
    points = sweep_points(exp)
    log.info("sweeping %d points with %d worker(s)", len(points), args.workers)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_run_point, points))
    else:
        rows = [run_point(*p) for p in points]
    write_rows(Path(args.out) / "sweep.csv", rows)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.error("%s at %s dB: %s", r["scheme"], r["budget_db"], r["status"])
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate-config": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoimac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment file (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--scheme", choices=("oma", "noma"), help="override the config scheme")
        p.add_argument("--out", help="output directory (default: config output.dir)")
        p.add_argument("--workers", type=int, default=1, help="sweep worker processes")
    return parser


def load_experiment(args) -> ExperimentConfig:
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({"version": 1})
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        exp = exp.with_value("seed", args.seed)
    if args.scheme is not None:
        exp = exp.with_value("scheme", args.scheme)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    if args.out is None:
        args.out = exp.raw["output"]["dir"]
    return exp


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        exp = load_experiment(args)
        if args.command != "validate-config":
            Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](exp, args)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as err:
        log.error("numerical failure: %s: %s", type(err).__name__, err)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
