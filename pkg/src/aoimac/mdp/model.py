"""Action sets, policies and transition kernels for the OMA and NOMA problems.

OMA decouples: each source is its own MDP on (round, age) with a
:class:`SourceActions` set. NOMA is one MDP on the two-source product space
whose actions are (source-0 index, source-1 index, decoding order) triples.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..channel import quantize_equiprobable
from ..config import ScenarioConfig
from ..link_noma import (
    build_noma_actions,
    decoding_orders,
    joint_outcome_array,
    sic_theta,
)
from ..link_oma import build_oma_actions, oma_energy_threshold
from .states import StateSpace, enumerate_states


@dataclass(frozen=True, eq=False)
class SourceActions:
    """One source's OMA action set: power, analytic success probability and
    the gain a slot needs for that power to decode."""

    powers: np.ndarray
    success: np.ndarray
    thresholds: np.ndarray

    def __len__(self):
        return len(self.powers)


@dataclass(frozen=True, eq=False)
class JointActions:
    """Two-source NOMA action set, index ``a = (i*K + j)*n_orders + d``."""

    orders: tuple[tuple[int, ...], ...]
    order: np.ndarray     # (A,) index into ``orders``
    index: np.ndarray     # (A, 2) per-source action index
    powers: np.ndarray    # (A, 2)
    probs: np.ndarray     # (A, 4) outcome probabilities (SS, SF, FS, FF)
    theta: float
    mode: str

    def __len__(self):
        return len(self.order)


# outcome o -> (source-0 failed, source-1 failed)
OUTCOME_BITS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """State -> action map.

    OMA: ``actions`` has shape ``(N, S)`` (per-source state). NOMA: shape
    ``(S*S,)`` indexing ``action_set``.
    """

    scheme: str
    actions: np.ndarray
    action_set: object

    def powers(self) -> np.ndarray:
        """Per-state power; ``(N, S)`` for OMA, ``(S*S, 2)`` for NOMA."""
        if self.scheme == "oma":
            return np.stack([acts.powers[a] for acts, a in zip(self.action_set, self.actions)])
        return self.action_set.powers[self.actions]


@dataclass(frozen=True, eq=False)
class MixedPolicy:
    minus: DeterministicPolicy
    plus: DeterministicPolicy
    xi: tuple[float, ...]


class OmaModel:
    scheme = "oma"

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.channel = quantize_equiprobable(scenario.channel, scenario.K)
        self.space: StateSpace = enumerate_states(
            scenario.max_rounds, scenario.delta_max, 1, scenario.age_overflow)
        self.tables = [build_oma_actions(self.channel, rho, scenario.rate_bits)
                       for rho in scenario.rho]
        self.actions = [SourceActions(t.powers, t.success, t.thresholds) for t in self.tables]
        self.constraints = np.array([b / rho for b, rho in zip(scenario.power_budgets, scenario.rho)])
        self.energy = np.array([oma_energy_threshold(rho, scenario.rate_bits) for rho in scenario.rho])

    @property
    def n_sources(self) -> int:
        return self.scenario.n_sources

    def power_actions(self, n: int, powers) -> SourceActions:
        """Action set for arbitrary power levels of source ``n``."""
        powers = np.asarray(powers, dtype=float)
        with np.errstate(divide="ignore"):
            thr = np.where(powers > 0, self.energy[n] / np.where(powers > 0, powers, 1.0), np.inf)
        success = 1.0 - self.scenario.channel.cdf(thr)
        return SourceActions(powers, success, thr)

    def fixed_power_actions(self) -> list[SourceActions]:
        return [self.power_actions(n, [self.constraints[n]]) for n in range(self.n_sources)]

    def transition_matrix(self, policy: DeterministicPolicy, n: int) -> sp.csr_matrix:
        acts = policy.action_set[n]
        q = acts.success[policy.actions[n]]
        return source_kernel(self.space, q)


def source_kernel(space: StateSpace, success: np.ndarray) -> sp.csr_matrix:
    S = space.size
    rows = np.concatenate([np.arange(S), np.arange(S)])
    cols = np.concatenate([space.succ, space.fail])
    data = np.concatenate([success, 1.0 - success])
    return sp.csr_matrix((data, (rows, cols)), shape=(S, S))


class NomaModel:
    scheme = "noma"

    def __init__(self, scenario: ScenarioConfig):
        if scenario.n_sources != 2:
            raise NotImplementedError("the NOMA model is implemented for two sources")
        self.scenario = scenario
        self.channel = quantize_equiprobable(scenario.channel, scenario.K)
        self.space: StateSpace = enumerate_states(
            scenario.max_rounds, scenario.delta_max, 1, scenario.age_overflow)
        self.orders = tuple(decoding_orders(2))
        self.tables = {o: build_noma_actions(self.channel, scenario.rate_bits, o) for o in self.orders}
        self.theta = sic_theta(scenario.rate_bits)
        self.constraints = np.array(scenario.power_budgets, dtype=float)
        self.actions = self.table_actions()

    @property
    def n_sources(self) -> int:
        return 2

    def table_actions(self, tables=None) -> JointActions:
        """All ``(i, j, order)`` triples built from per-order power tables.

        ``tables`` maps order index -> ``(2, K)`` power array; the default is
        the model's SIC tables.
        """
        if tables is None:
            tables = [self.tables[o].powers for o in self.orders]
        K = tables[0].shape[1]
        n_o = len(self.orders)
        i, j, d = np.meshgrid(np.arange(K), np.arange(K), np.arange(n_o), indexing="ij")
        i, j, d = i.ravel(), j.ravel(), d.ravel()
        tab = np.stack(tables)  # (n_o, 2, K)
        powers = np.stack([tab[d, 0, i], tab[d, 1, j]], axis=1)
        return self.power_actions(powers, d, np.stack([i, j], axis=1))

    def power_actions(self, powers, order_idx, index=None) -> JointActions:
        powers = np.asarray(powers, dtype=float).reshape(-1, 2)
        order_idx = np.asarray(order_idx, dtype=np.int64).ravel()
        probs = np.empty((len(order_idx), 4))
        for d, order in enumerate(self.orders):
            sel = order_idx == d
            if sel.any():
                probs[sel] = joint_outcome_array(powers[sel, 0], powers[sel, 1], order, self.theta,
                                                 self.scenario.coupling_mode, self.scenario.channel)
        if index is None:
            index = np.zeros((len(order_idx), 2), dtype=np.int64)
        return JointActions(self.orders, order_idx, index, powers, probs, self.theta,
                            self.scenario.coupling_mode)

    def fixed_power_actions(self) -> JointActions:
        """Both sources at their budget; only the decoding order is free."""
        p = np.tile(self.constraints, (len(self.orders), 1))
        return self.power_actions(p, np.arange(len(self.orders)))

    @cached_property
    def joint_next(self) -> np.ndarray:
        """``(4, S*S)`` joint successor index per outcome."""
        S = self.space.size
        nxt = (self.space.succ, self.space.fail)
        i0, i1 = np.divmod(np.arange(S * S), S)
        return np.stack([nxt[f0][i0] * S + nxt[f1][i1] for f0, f1 in OUTCOME_BITS])

    @cached_property
    def joint_delta(self) -> np.ndarray:
        """``(2, S*S)`` ages of each source in each joint state."""
        S = self.space.size
        i0, i1 = np.divmod(np.arange(S * S), S)
        return np.stack([self.space.delta[i0], self.space.delta[i1]])

    def transition_matrix(self, policy: DeterministicPolicy) -> sp.csr_matrix:
        probs = policy.action_set.probs[policy.actions]  # (SS, 4)
        SS = probs.shape[0]
        rows = np.repeat(np.arange(SS), 4)
        cols = self.joint_next.T.ravel()
        return sp.csr_matrix((probs.ravel(), (rows, cols)), shape=(SS, SS))

    def swap_states(self) -> np.ndarray:
        """Permutation mapping joint index (i0, i1) to (i1, i0)."""
        S = self.space.size
        i0, i1 = np.divmod(np.arange(S * S), S)
        return i1 * S + i0


def build_model(scenario: ScenarioConfig, scheme: str):
    if scheme == "oma":
        return OmaModel(scenario)
    if scheme == "noma":
        return NomaModel(scenario)
    raise ValueError(f"unknown scheme {scheme!r}")
