"""Tabular Q-learning with epsilon-greedy exploration and stochastic
multiplier tracking, for OMA and NOMA, trained online against the slot
simulator (no channel statistics are used by the learner).

Rewards pair the post-transition age with the chosen power,
``w * (delta' + 1/2) + beta * p``.

Two options speed up learning at discount factors near one. Reward centering
subtracts a running mean of the rewards, which shifts every Q entry by the same
constant and so leaves the greedy policy unchanged, but removes the large
common offset the table otherwise has to learn. The rescaled learning rate
``(H+1)/(H+n(s,a))`` averages more aggressively than ``1/sqrt(i)``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .config import LR_SCHEDULES, LearnerConfig
from .link_noma import INDEPENDENT
from .mdp.model import DeterministicPolicy, SourceActions
from .sim import Uplink

EVAL_SLOTS = 200_000


class InvalidActionSet(ValueError):
    pass


class DivergentQ(RuntimeError):
    pass


def normalize_actions(powers, budget: float) -> np.ndarray:
    """Rescale a power set so its mean is ``budget``: ``K * P_k / sum(P) * budget``."""
    p = np.asarray(powers, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.any(p > 0):
        raise InvalidActionSet("need a nonnegative power set with at least one positive entry")
    return p.size * p / p.sum() * budget


def epsilon_probabilities(q_row, eps: float) -> np.ndarray:
    """Action law of :func:`epsilon_greedy`: ``eps/K`` everywhere plus
    ``1 - eps`` on the lowest-index minimizer."""
    q_row = np.asarray(q_row)
    K = q_row.size
    out = np.full(K, eps / K)
    out[int(np.argmin(q_row))] += 1.0 - eps
    return out


def epsilon_greedy(q_row, eps: float, rng: np.random.Generator) -> int:
    """Uniform action with probability ``eps``, else the argmin (lowest index on ties).

    Always consumes two uniforms so the random stream layout does not depend on ``eps``.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    u_eps, u_act = rng.random(2)
    return int(kern._eps_greedy(np.asarray(q_row, dtype=float), eps, u_eps, u_act))


def q_update(Q: np.ndarray, s: int, a: int, r: float, s_next: int, alpha: float, lam: float) -> float:
    """``Q[s, a] += alpha * (r + lam * min Q[s_next] - Q[s, a])``; returns the new entry."""
    target = r + lam * Q[s_next].min()
    Q[s, a] += alpha * (target - Q[s, a])
    return float(Q[s, a])


def learning_rate(schedule: str, step: int, visits: int, horizon: float) -> float:
    """Step size after the ``visits``-th update of an entry at step ``step``."""
    if schedule == "global":
        return 1.0 / math.sqrt(step)
    if schedule == "visits":
        return 1.0 / math.sqrt(visits)
    if schedule == "rescaled":
        return (horizon + 1.0) / (horizon + visits)
    raise ValueError(f"unknown learning-rate schedule {schedule!r}")


def multiplier_update(beta: float, p_hat: float, target: float, zeta: float) -> float:
    return max(0.0, beta + zeta * (p_hat - target))


# ---------------------------------------------------------------------------
# Action sets


def oma_learning_actions(model) -> list[SourceActions]:
    """Per-source normalized OMA sets with mean equal to the in-burst constraint."""
    return [model.power_actions(n, normalize_actions(model.tables[n].powers, model.constraints[n]))
            for n in range(model.n_sources)]


def noma_learning_powers(model) -> np.ndarray:
    """``(n_orders, 2, K)`` normalized NOMA powers.

    Each source's rows for all decoding orders are normalized together, so
    the mean over orders and indices equals the budget and the first/last
    power ratio of the SIC table is kept.
    """
    K = model.scenario.K
    tabs = np.stack([model.tables[o].powers for o in model.orders])  # (O, 2, K)
    out = np.empty_like(tabs)
    for n in range(2):
        flat = normalize_actions(tabs[:, n, :].ravel(), model.constraints[n])
        out[:, n, :] = flat.reshape(len(model.orders), K)
    return out


# ---------------------------------------------------------------------------
# Reports


@dataclass(eq=False)
class TrainReport:
    scheme: str
    seed: int
    curve: list                 # rows of CURVE fields
    episode_ages: list          # per episode, per source
    episode_powers: list
    beta_trace: list            # per episode, per source (after the update)
    betas: np.ndarray
    q: np.ndarray               # (N, S, K)
    greedy: np.ndarray          # (N, S) argmin actions
    powers: np.ndarray          # learner action powers
    runs: int
    converged: bool
    steps: int
    eval_age: float             # greedy play, weighted mean age (no 1/2 offset)
    eval_ages: np.ndarray
    eval_powers: np.ndarray
    eval_slots: int
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def final_age(self) -> float:
        """Weighted mean age over the last training episode."""
        return float(np.dot(self.extra["weights"], self.episode_ages[-1]))

    @property
    def final_powers(self) -> list:
        return list(self.episode_powers[-1])

    def curve_columns(self) -> list[str]:
        N = len(self.betas)
        return (["episode", "step"] + [f"age_{n + 1}" for n in range(N)] + ["weighted_age"]
                + [f"beta_{n + 1}" for n in range(N)] + [f"power_{n + 1}" for n in range(N)])

    def write_curve(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.curve_columns())
            for row in self.curve:
                w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "runs": self.runs,
            "converged": self.converged,
            "steps": self.steps,
            "betas": [float(b) for b in self.betas],
            "final_age": self.final_age,
            "final_powers": [float(p) for p in self.final_powers],
            "eval_age": self.eval_age,
            "eval_ages": self.eval_ages.tolist(),
            "eval_powers": self.eval_powers.tolist(),
            "eval_slots": self.eval_slots,
            "episode_ages": [list(map(float, a)) for a in self.episode_ages],
            "episode_powers": [list(map(float, p)) for p in self.episode_powers],
            "beta_trace": [list(map(float, b)) for b in self.beta_trace],
            "greedy": self.greedy.tolist(),
            "q": self.q.tolist(),
            "powers": self.powers.tolist(),
            "runtime": self.runtime,
        }


# ---------------------------------------------------------------------------
# Training


class _Setup:
    """Arrays shared by the training and greedy-play kernels."""

    def __init__(self, model, cfg: LearnerConfig):
        sc = model.scenario
        space = model.space
        self.model = model
        self.cfg = cfg
        self.N = model.n_sources
        self.S = space.size
        self.K = sc.K
        self.lam = sc.discount
        self.succ = np.ascontiguousarray(space.succ)
        self.fail = np.ascontiguousarray(space.fail)
        self.delta = np.ascontiguousarray(space.delta)
        self.weights = np.asarray(sc.weights, dtype=float)
        self.targets = np.asarray(model.constraints, dtype=float)
        self.start = space.index(1, 1)
        self.uplink = Uplink(model)
        if model.scheme == "oma":
            acts = oma_learning_actions(model)
            self.powers = np.stack([a.powers for a in acts])
            self.thr = np.stack([a.thresholds for a in acts])
        else:
            self.powers = noma_learning_powers(model)
            self.firsts = np.array([o[0] for o in model.orders], dtype=np.int64)
            self.factored = sc.coupling_mode == INDEPENDENT
            K = self.K
            i, j = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
            probs = np.empty((len(model.orders), K, K, 4))
            for d in range(len(model.orders)):
                pw = np.stack([self.powers[d, 0, i.ravel()], self.powers[d, 1, j.ravel()]], axis=1)
                probs[d] = model.power_actions(pw, np.full(K * K, d)).probs.reshape(K, K, 4)
            self.probs = probs

    def draws(self, rng, T):
        gains = self.uplink.draw_gains(rng, T)
        u_eps = rng.random((T, self.N))
        u_act = rng.random((T, self.N))
        unif = rng.random(T)
        return gains, u_eps, u_act, unif

    def play(self, Q, counts, state, betas, rbar, rng, T, step, learn, acc_age, acc_pow,
             order_count):
        cfg = self.cfg
        gains, u_eps, u_act, unif = self.draws(rng, T)
        lr_mode = LR_SCHEDULES.index(cfg.lr_schedule)
        lr_h = cfg.lr_horizon if cfg.lr_horizon is not None else 1.0 / (1.0 - self.lam)
        if self.model.scheme == "oma":
            return kern.rl_oma_chunk(Q, counts, state, self.succ, self.fail, self.delta, self.weights,
                                     self.powers, self.thr, betas, self.targets, self.lam, gains,
                                     u_eps, u_act, step, cfg.eps0, cfg.tau, cfg.eps_min, learn,
                                     lr_mode, lr_h, rbar, cfg.center_rate, cfg.beta_per_step,
                                     cfg.zeta0, acc_age, acc_pow)
        return kern.rl_noma_chunk(Q, counts, state, self.succ, self.fail, self.delta, self.weights,
                                  self.powers, self.firsts, self.probs, self.factored,
                                  self.model.theta, betas, self.targets, self.lam, gains, u_eps,
                                  u_act, unif, step, cfg.eps0, cfg.tau, cfg.eps_min, learn,
                                  lr_mode, lr_h, rbar, cfg.center_rate, cfg.beta_per_step,
                                  cfg.zeta0, acc_age, acc_pow, order_count)


@dataclass(eq=False)
class _State:
    Q: np.ndarray
    counts: np.ndarray
    betas: np.ndarray
    state: np.ndarray
    rbar: np.ndarray
    step: int = 0
    episode: int = 0


def _episodes(setup: _Setup, st: _State, rng, curve, ep_ages, ep_powers, beta_trace, order_count):
    cfg = setup.cfg
    N = setup.N
    for _ in range(cfg.episodes):
        st.episode += 1
        ep_age = np.zeros(N, dtype=np.int64)
        ep_pow = np.zeros(N)
        done = 0
        while done < cfg.iterations:
            T = min(cfg.log_every, cfg.iterations - done)
            acc_age = np.zeros(N, dtype=np.int64)
            acc_pow = np.zeros(N)
            i0 = done if cfg.schedule_scope == "episode" else st.step
            setup.play(st.Q, st.counts, st.state, st.betas, st.rbar, rng, T, i0, True,
                       acc_age, acc_pow, order_count)
            st.step += T
            done += T
            ep_age += acc_age
            ep_pow += acc_pow
            ages = acc_age / T
            curve.append([st.episode, st.step, *ages, float(np.dot(setup.weights, ages)),
                          *st.betas, *(acc_pow / T)])
        if not np.all(np.isfinite(st.Q)):
            raise DivergentQ(f"non-finite Q entry after episode {st.episode}")
        p_hat = ep_pow / cfg.iterations
        if not cfg.beta_per_step:
            zeta = cfg.zeta0 / (st.episode + cfg.zeta_offset)
            st.betas[:] = [multiplier_update(b, p, c, zeta)
                           for b, p, c in zip(st.betas, p_hat, setup.targets)]
        ep_ages.append(ep_age / cfg.iterations)
        ep_powers.append(p_hat)
        beta_trace.append(st.betas.copy())


def greedy_play(setup: _Setup, Q, betas, rng, slots: int):
    """Run the greedy policy of ``Q`` without learning; returns (ages, powers, order counts)."""
    N = setup.N
    state = np.full(N, setup.start, dtype=np.int64)
    counts = np.zeros(Q.shape, dtype=np.int64)
    acc_age = np.zeros(N, dtype=np.int64)
    acc_pow = np.zeros(N)
    order_count = np.zeros(2, dtype=np.int64)
    done = 0
    chunk = 1 << 16
    while done < slots:
        T = min(chunk, slots - done)
        setup.play(Q, counts, state, betas.copy(), np.zeros(N), rng, T, 0, False,
                   acc_age, acc_pow, order_count)
        done += T
    return acc_age / slots, acc_pow / slots, order_count


def train(model, config: LearnerConfig = LearnerConfig(), seed: int = 0,
          eval_slots: int = EVAL_SLOTS) -> TrainReport:
    """Train online against the simulator, then score the greedy policy.

    OMA runs one training run. NOMA repeats runs, continuing from the
    previous Q tables and multipliers, until the last-episode weighted age
    moves by less than ``gamma_delta`` (first comparison against 0), at
    most ``max_runs`` times; if that never happens the run with the lowest
    last-episode age is returned, flagged non-converged.
    """
    t0 = time.perf_counter()
    setup = _Setup(model, config)
    N, S, K = setup.N, setup.S, setup.K
    rng = np.random.default_rng([seed, 0])
    st = _State(np.zeros((N, S, K)), np.zeros((N, S, K), dtype=np.int64),
                np.full(N, config.beta_init, dtype=float), np.full(N, setup.start, dtype=np.int64), np.zeros(N))
    curve, ep_ages, ep_powers, beta_trace = [], [], [], []
    order_count = np.zeros(2, dtype=np.int64)
    runs, converged = 0, True
    if model.scheme == "oma":
        _episodes(setup, st, rng, curve, ep_ages, ep_powers, beta_trace, order_count)
        runs = 1
        best_Q, best_betas = st.Q, st.betas
    else:
        prev = 0.0
        best = (math.inf, None, None)
        converged = False
        while runs < config.max_runs:
            runs += 1
            _episodes(setup, st, rng, curve, ep_ages, ep_powers, beta_trace, order_count)
            age = float(np.dot(setup.weights, ep_ages[-1]))
            if age < best[0]:
                best = (age, st.Q.copy(), st.betas.copy())
            if abs(age - prev) < config.gamma_delta:
                converged = True
                break
            prev = age
        if converged:
            best_Q, best_betas = st.Q, st.betas
        else:
            best_Q, best_betas = best[1], best[2]
    eval_rng = np.random.default_rng([seed, 1])
    ages, powers, orders = greedy_play(setup, best_Q, best_betas, eval_rng, eval_slots)
    report = TrainReport(
        scheme=model.scheme, seed=seed, curve=curve, episode_ages=ep_ages,
        episode_powers=ep_powers, beta_trace=beta_trace, betas=best_betas.copy(),
        q=best_Q.copy(), greedy=best_Q.argmin(axis=2), powers=setup.powers.copy(), runs=runs,
        converged=converged, steps=st.step, eval_age=float(np.dot(setup.weights, ages)),
        eval_ages=ages, eval_powers=powers, eval_slots=eval_slots,
        runtime=time.perf_counter() - t0,
        extra={"weights": list(setup.weights), "order_counts": orders.tolist(),
               "targets": setup.targets.tolist()},
    )
    return report


def train_oma(model, config: LearnerConfig = LearnerConfig(), seed: int = 0, **kw) -> TrainReport:
    if model.scheme != "oma":
        raise ValueError("train_oma needs an OMA model")
    return train(model, config, seed, **kw)


def train_noma(model, config: LearnerConfig = LearnerConfig(), seed: int = 0, **kw) -> TrainReport:
    if model.scheme != "noma":
        raise ValueError("train_noma needs a NOMA model")
    return train(model, config, seed, **kw)


def greedy_oma_policy(model, report: TrainReport) -> DeterministicPolicy:
    """Learned OMA greedy policy as a simulator policy on the learner's action sets."""
    return DeterministicPolicy("oma", report.greedy, oma_learning_actions(model))


# ---------------------------------------------------------------------------
# Expected-update sweeps


def expected_q_sweeps(model, betas, actions=None, tol: float = 1e-10, max_sweeps: int = 100_000):
    """Synchronous Q iteration with exact OMA outcome probabilities and no exploration.

    Returns ``(Q, sweeps)`` with ``Q`` of shape ``(N, S, K)``. With the
    post-transition reward, ``(1 - lam) * (w * (delta + 1/2) + lam * min Q)``
    equals the value-iteration table at multiplier ``lam * beta``.
    """
    if model.scheme != "oma":
        raise ValueError("expected sweeps are implemented for OMA")
    sc = model.scenario
    lam = sc.discount
    space = model.space
    actions = model.actions if actions is None else actions
    Qs = []
    total = 0
    for n in range(model.n_sources):
        acts = actions[n]
        w, b = sc.weights[n], float(np.broadcast_to(betas, (model.n_sources,))[n])
        r_succ = w * (space.delta[space.succ] + 0.5)
        r_fail = w * (space.delta[space.fail] + 0.5)
        q = acts.success[None, :]
        Q = np.zeros((space.size, len(acts)))
        for k in range(1, max_sweeps + 1):
            V = Q.min(axis=1)
            new = (b * acts.powers[None, :]
                   + q * (r_succ[:, None] + lam * V[space.succ][:, None])
                   + (1 - q) * (r_fail[:, None] + lam * V[space.fail][:, None]))
            diff = np.abs(new - Q).max()
            Q = new
            if diff < tol:
                break
        total = max(total, k)
        Qs.append(Q)
    return np.stack(Qs), total


def q_to_values(model, Q) -> np.ndarray:
    """Map expected-update Q tables to normalized value-iteration tables."""
    sc = model.scenario
    lam = sc.discount
    w = np.asarray(sc.weights)[:, None]
    return (1 - lam) * (w * (model.space.delta[None, :] + 0.5) + lam * Q.min(axis=2))
