"""Per-source (round, age) states and their success/failure successors."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..config import RESET, SATURATE


class InfeasibleCap(ValueError):
    pass


@dataclass(frozen=True)
class SourceState:
    m: int
    delta: int


def next_state(s: SourceState, success: bool, M: int, delta_max: int,
               age_overflow: str = SATURATE) -> SourceState:
    """One slot of the retransmission/age dynamics.

    Success delivers a packet that is ``m`` slots old. Failure bumps the
    round (or drops the packet after round ``M``) and ages by one. Ages past
    ``delta_max`` are clamped (saturate) or restart from the smallest age
    compatible with the new round (reset-to-one).
    """
    if success:
        return SourceState(1, min(s.m, delta_max))
    m = s.m + 1 if s.m < M else 1
    delta = s.delta + 1
    if delta > delta_max:
        delta = delta_max if age_overflow == SATURATE else m
    return SourceState(m, delta)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Feasible per-source states in (delta, m) lexicographic order.

    ``succ[i]``/``fail[i]`` give the successor index after a success or a
    failure. The joint space of ``n_sources`` is the row-major product, so a
    two-source joint index is ``i0 * size + i1``.
    """

    M: int
    delta_max: int
    n_sources: int
    age_overflow: str
    m: np.ndarray
    delta: np.ndarray
    succ: np.ndarray
    fail: np.ndarray

    @property
    def size(self) -> int:
        return len(self.m)

    @property
    def joint_size(self) -> int:
        return self.size ** self.n_sources

    def index(self, m: int, delta: int) -> int:
        hits = np.flatnonzero((self.m == m) & (self.delta == delta))
        if hits.size != 1:
            raise KeyError((m, delta))
        return int(hits[0])

    def states(self) -> list[SourceState]:
        return [SourceState(int(a), int(b)) for a, b in zip(self.m, self.delta)]

    def joint_states(self):
        """Iterate joint states as tuples of :class:`SourceState`."""
        per = self.states()
        return itertools.product(per, repeat=self.n_sources)


def enumerate_states(M: int, delta_max: int, n_sources: int = 1,
                     age_overflow: str = SATURATE) -> StateSpace:
    if M < 1:
        raise ValueError("M must be >= 1")
    if delta_max < M:
        raise InfeasibleCap(f"delta_max={delta_max} is below M={M}")
    if age_overflow not in (SATURATE, RESET):
        raise ValueError(f"unknown age_overflow {age_overflow!r}")
    pairs = [(m, d) for d in range(1, delta_max + 1) for m in range(1, min(M, d) + 1)]
    lookup = {p: i for i, p in enumerate(pairs)}
    succ = np.empty(len(pairs), dtype=np.int64)
    fail = np.empty(len(pairs), dtype=np.int64)
    for i, (m, d) in enumerate(pairs):
        s = SourceState(m, d)
        ok = next_state(s, True, M, delta_max, age_overflow)
        bad = next_state(s, False, M, delta_max, age_overflow)
        succ[i] = lookup[(ok.m, ok.delta)]
        fail[i] = lookup[(bad.m, bad.delta)]
    m_arr = np.array([p[0] for p in pairs], dtype=np.int64)
    d_arr = np.array([p[1] for p in pairs], dtype=np.int64)
    for arr in (m_arr, d_arr, succ, fail):
        arr.setflags(write=False)
    return StateSpace(M, delta_max, n_sources, age_overflow, m_arr, d_arr, succ, fail)
