"""Seeded slot-level simulation of the two-source uplink.

Each slot draws one fading gain per source, applies the policy, decodes with
the physical success conditions (own threshold for OMA, SIC for NOMA) and
advances every source's (round, age) state. Metrics are exact time averages
over the simulated slots, taken at the start of each slot.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .channel import sample_gain
from .config import SimConfig
from .link_noma import INDEPENDENT, sic_decode
from .mdp.model import OUTCOME_BITS, DeterministicPolicy, MixedPolicy
from .mdp.states import SourceState, next_state


class SimulationAborted(RuntimeError):
    def __init__(self, slot: int, message: str):
        super().__init__(f"slot {slot}: {message}")
        self.slot = slot


TRACE_COLUMNS = ("slot", "m_1", "delta_1", "m_2", "delta_2", "action_1", "action_2", "order", "outcome")


@dataclass(eq=False)
class Metrics:
    scheme: str
    slots: int
    weights: tuple
    mean_age: np.ndarray       # per-source time average of the age at slot start
    avg_power: np.ndarray
    attempts: np.ndarray       # non-idle slots per source
    successes: np.ndarray
    visits: np.ndarray         # OMA: (N, S) per source; NOMA: (S*S,) joint
    trace: dict | None = field(default=None, repr=False)

    @property
    def weighted_age(self) -> float:
        return float(np.dot(self.weights, self.mean_age))

    @property
    def weighted_aoi(self) -> float:
        """Trapezoid AoI, ``sum_n w_n * (mean_age_n + 1/2)``."""
        return float(np.dot(self.weights, self.mean_age + 0.5))

    @property
    def success_rate(self) -> np.ndarray:
        return self.successes / np.maximum(self.attempts, 1)

    def visit_frequencies(self) -> np.ndarray:
        return self.visits / self.slots

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "slots": self.slots,
            "weighted_age": self.weighted_age,
            "weighted_aoi": self.weighted_aoi,
            "mean_age": self.mean_age.tolist(),
            "avg_power": self.avg_power.tolist(),
            "success_rate": self.success_rate.tolist(),
            "attempts": self.attempts.tolist(),
            "successes": self.successes.tolist(),
        }

    def write_trace(self, path) -> None:
        if self.trace is None:
            raise ValueError("simulation ran without a trace")
        t = self.trace
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for k in range(len(t["slot"])):
                m = list(t["m"][k]) + [0] * (2 - t["m"].shape[1])
                d = list(t["delta"][k]) + [0] * (2 - t["delta"].shape[1])
                a = list(t["action"][k]) + [0] * (2 - t["action"].shape[1])
                ok = "".join("S" if o else "F" for o in t["ok"][k])
                order = "" if t["order"] is None else int(t["order"][k]) + 1
                w.writerow([int(t["slot"][k]), m[0], d[0], m[1], d[1], a[0] + 1, a[1] + 1, order, ok])


class Uplink:
    """Physical layer of the simulator: gain draws and pure decode evaluation."""

    def __init__(self, model):
        self.model = model
        self.scheme = model.scheme
        self.fading = model.scenario.channel
        self.n_sources = model.n_sources

    def draw_gains(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return sample_gain(self.fading, rng, (size, self.n_sources))

    def decode(self, gains, powers, order=None) -> tuple[bool, ...]:
        if self.scheme == "oma":
            return tuple(bool(p > 0 and g >= e / p)
                         for g, p, e in zip(gains, powers, self.model.energy))
        orders = self.model.orders
        return sic_decode(gains, powers, orders[order if order is not None else 0], self.model.theta)

    def freeze_evaluate(self, gains, powers, order=None, states=None, betas=None):
        """Outcome and per-source Lagrangian rewards for one frozen slot.

        Pure: nothing is mutated. ``order`` indexes the model's decoding
        orders (NOMA only). Rewards use the post-decode age and are ``None``
        when ``states`` is not given.
        """
        ok = self.decode(gains, powers, order)
        if states is None:
            return ok, None
        sc = self.model.scenario
        betas = np.zeros(self.n_sources) if betas is None else betas
        rewards = []
        for n, s in enumerate(states):
            nxt = next_state(s, ok[n], sc.max_rounds, sc.delta_max, sc.age_overflow)
            rewards.append(sc.weights[n] * (nxt.delta + 0.5) + betas[n] * powers[n])
        return ok, tuple(rewards)


def _policy_parts(model, policy):
    if isinstance(policy, MixedPolicy):
        xi = np.asarray(policy.xi, dtype=float)
        return policy.minus, policy.plus, xi
    if isinstance(policy, DeterministicPolicy):
        return policy, policy, np.ones(model.n_sources)
    raise TypeError("policy must be a DeterministicPolicy or MixedPolicy")


def noma_coin(model, xi) -> float:
    """Single per-slot mixing probability for a joint NOMA policy: the
    weight-averaged per-source coefficient."""
    w = np.asarray(model.scenario.weights)
    return float(np.dot(w, xi) / w.sum())


class _Draws:
    """Fixed layout of the per-chunk random stream."""

    def __init__(self, uplink: Uplink, rng: np.random.Generator):
        self.uplink = uplink
        self.rng = rng

    def __call__(self, T: int):
        gains = self.uplink.draw_gains(self.rng, T)
        coins = self.rng.random((T, self.uplink.n_sources))
        unif = self.rng.random(T)
        return gains, coins, unif


def _empty_trace(L, N):
    return (np.full(L, -1, dtype=np.int64), np.zeros((L, N), dtype=np.int64),
            np.zeros((L, N), dtype=np.int64), np.zeros((L, N), dtype=np.int64),
            np.zeros(L, dtype=np.int64), np.zeros((L, N), dtype=np.bool_))


def _unroll_trace(tr, slots, scheme):
    slot, m, d, a, order, ok = tr
    L = len(slot)
    if L == 0:
        return None
    n = min(slots, L)
    start = slots % L if slots > L else 0
    idx = (np.arange(n) + start) % L
    return {"slot": slot[idx], "m": m[idx], "delta": d[idx], "action": a[idx],
            "order": order[idx] if scheme == "noma" else None, "ok": ok[idx]}


def run_sim(model, policy, config: SimConfig = SimConfig(), rng: np.random.Generator | None = None) -> Metrics:
    """Simulate ``config.slots`` slots from the all-fresh state.

    ``policy`` is a :class:`DeterministicPolicy`, a :class:`MixedPolicy`
    (one coin per source per slot for OMA, one shared coin for NOMA) or a
    callable ``agent(slot, states) -> action`` returning per-source indices
    into ``model.actions`` (OMA) or a joint action index (NOMA).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if callable(policy) and not isinstance(policy, (DeterministicPolicy, MixedPolicy)):
        return _run_agent(model, policy, config, rng)
    minus, plus, xi = _policy_parts(model, policy)
    uplink = Uplink(model)
    draws = _Draws(uplink, rng)
    space = model.space
    S = space.size
    N = model.n_sources
    L = config.trace_len if config.trace else 0
    trace = _empty_trace(L, N)
    acc_age = np.zeros(N, dtype=np.int64)
    acc_pow = np.zeros(N)
    acc_succ = np.zeros(N, dtype=np.int64)
    acc_att = np.zeros(N, dtype=np.int64)
    start = space.index(1, 1)
    state = np.full(N, start, dtype=np.int64)
    m_of = np.ascontiguousarray(space.m)
    delta = np.ascontiguousarray(space.delta)
    succ = np.ascontiguousarray(space.succ)
    fail = np.ascontiguousarray(space.fail)
    if model.scheme == "oma":
        visits = np.zeros((N, S), dtype=np.int64)
        pol_m = np.ascontiguousarray(minus.actions, dtype=np.int64)
        pol_p = np.ascontiguousarray(plus.actions, dtype=np.int64)
        sets = minus.action_set
        A = max(len(s) for s in sets)
        thr = np.full((N, A), np.inf)
        pw = np.zeros((N, A))
        for n, s in enumerate(sets):
            thr[n, :len(s)] = s.thresholds
            pw[n, :len(s)] = s.powers
        done = 0
        while done < config.slots:
            T = min(config.chunk, config.slots - done)
            gains, coins, _ = draws(T)
            kern.sim_oma_chunk(state, succ, fail, m_of, delta, pol_m, pol_p, xi, thr, pw,
                               gains, coins, done, acc_age, acc_pow, acc_succ, acc_att, visits,
                               trace[0], trace[1], trace[2], trace[3], trace[5])
            done += T
    else:
        if minus.action_set is not plus.action_set:
            raise ValueError("mixed NOMA policies must share one action set")
        acts = minus.action_set
        visits = np.zeros(S * S, dtype=np.int64)
        coin = noma_coin(model, xi)
        factored = acts.mode == INDEPENDENT
        pol_m = np.ascontiguousarray(minus.actions, dtype=np.int64)
        pol_p = np.ascontiguousarray(plus.actions, dtype=np.int64)
        first = np.array([acts.orders[d][0] for d in acts.order], dtype=np.int64)
        done = 0
        while done < config.slots:
            T = min(config.chunk, config.slots - done)
            gains, coins, unif = draws(T)
            kern.sim_noma_chunk(state, succ, fail, m_of, delta, S, pol_m, pol_p, coin,
                                np.ascontiguousarray(acts.powers), first,
                                np.ascontiguousarray(acts.probs), acts.theta, factored,
                                gains, np.ascontiguousarray(coins[:, 0]), unif, done,
                                acc_age, acc_pow, acc_succ, acc_att, visits, *trace)
            done += T
        trace = (trace[0], trace[1], trace[2], trace[3],
                 _orders_from_first(trace[4]), trace[5])
    return Metrics(model.scheme, config.slots, model.scenario.weights, acc_age / config.slots,
                   acc_pow / config.slots, acc_att, acc_succ, visits,
                   _unroll_trace(trace, config.slots, model.scheme))


def _orders_from_first(first):
    # two sources: order index 0 decodes source 0 first
    return np.where(first == 0, 0, 1)


def _run_agent(model, agent, config: SimConfig, rng) -> Metrics:
    """Pure-Python loop; also the reference the compiled kernels are tested against."""
    uplink = Uplink(model)
    draws = _Draws(uplink, rng)
    sc = model.scenario
    space = model.space
    N = model.n_sources
    S = space.size
    states = [SourceState(1, 1)] * N
    acc_age = np.zeros(N, dtype=np.int64)
    acc_pow = np.zeros(N)
    acc_att = np.zeros(N, dtype=np.int64)
    acc_succ = np.zeros(N, dtype=np.int64)
    visits = np.zeros((N, S) if model.scheme == "oma" else S * S, dtype=np.int64)
    done = 0
    while done < config.slots:
        T = min(config.chunk, config.slots - done)
        gains, coins, unif = draws(T)
        for t in range(T):
            slot = done + t
            idx = [space.index(s.m, s.delta) for s in states]
            action = agent(slot, tuple(states))
            if model.scheme == "oma":
                action = tuple(int(a) for a in action)
                if len(action) != N or any(not 0 <= a < len(model.actions[n]) for n, a in enumerate(action)):
                    raise SimulationAborted(slot, f"action {action} out of range")
                acts = model.actions
                powers = [acts[n].powers[a] for n, a in enumerate(action)]
                ok = tuple(bool(gains[t, n] >= acts[n].thresholds[a]) for n, a in enumerate(action))
                for n in range(N):
                    visits[n, idx[n]] += 1
            else:
                a = int(action)
                acts = model.actions
                if not 0 <= a < len(acts):
                    raise SimulationAborted(slot, f"action {a} out of range")
                powers = list(acts.powers[a])
                if acts.mode == INDEPENDENT:
                    ok = tuple(not f for f in OUTCOME_BITS[_factored_pick(acts.probs[a], unif[t])])
                else:
                    ok = sic_decode(gains[t], powers, acts.orders[acts.order[a]], acts.theta)
                visits[idx[0] * S + idx[1]] += 1
            for n in range(N):
                acc_age[n] += states[n].delta
                acc_pow[n] += powers[n]
                if powers[n] > 0:
                    acc_att[n] += 1
                    acc_succ[n] += bool(ok[n])
            states = [next_state(s, ok[n], sc.max_rounds, sc.delta_max, sc.age_overflow)
                      for n, s in enumerate(states)]
        done += T
    return Metrics(model.scheme, config.slots, sc.weights, acc_age / config.slots,
                   acc_pow / config.slots, acc_att, acc_succ, visits)


def _factored_pick(row, u) -> int:
    c = 0.0
    for o in range(3):
        c += row[o]
        if u < c:
            return o
    return 3


def policy_agent(model, policy: DeterministicPolicy):
    """Wrap a deterministic policy as an agent callback."""
    space = model.space
    S = space.size

    def agent(slot, states):
        idx = [space.index(s.m, s.delta) for s in states]
        if model.scheme == "oma":
            return tuple(int(policy.actions[n][i]) for n, i in enumerate(idx))
        return int(policy.actions[idx[0] * S + idx[1]])

    return agent
