"""OMA action tables: one power level per targeted channel state.

Source ``n`` owns a fraction ``rho`` of the slot and transmits ``rate`` bits,
so it succeeds iff ``rho*log2(1 + power*gain/rho) >= rate``, i.e. iff
``power*gain >= rho*(2**(rate/rho) - 1)``. Action ``a`` (0-based) targets the
lower edge ``z_{a+1}`` of channel state ``a+1``; the last action is idle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import QuantizedChannel


class InvalidSlotFraction(ValueError):
    pass


class UnsupportedActionSet(ValueError):
    pass


def oma_energy_threshold(rho: float, rate: float) -> float:
    """Smallest ``power*gain`` that decodes ``rate`` bits in a ``rho`` sub-slot."""
    return rho * math.expm1(rate / rho * math.log(2.0))


@dataclass(frozen=True, eq=False)
class OmaActionTable:
    rho: float
    rate: float
    powers: np.ndarray
    outage: np.ndarray
    thresholds: np.ndarray  # success iff gain >= thresholds[a]

    def __post_init__(self):
        for arr in (self.powers, self.outage, self.thresholds):
            arr.setflags(write=False)

    @property
    def K(self) -> int:
        return len(self.powers)

    @property
    def success(self) -> np.ndarray:
        return 1.0 - self.outage


def build_oma_actions(q: QuantizedChannel, rho: float, rate: float) -> OmaActionTable:
    if not 0.0 < rho < 1.0:
        raise InvalidSlotFraction(f"slot fraction must lie in (0, 1), got {rho}")
    if rate <= 0:
        raise ValueError("rate must be positive")
    if q.K < 2:
        raise UnsupportedActionSet("need K >= 2: with K = 1 the only action is idle")
    c = oma_energy_threshold(rho, rate)
    z = q.thresholds[1:]
    powers = np.where(np.isinf(z), 0.0, c / z)
    outage = np.minimum(np.cumsum(q.probs), 1.0)
    outage[-1] = 1.0
    return OmaActionTable(rho, rate, powers, outage, z.copy())


def oma_success_prob(table: OmaActionTable, a: int) -> float:
    """Success probability of action ``a`` (0-based; ``K-1`` is idle)."""
    if not 0 <= a < table.K:
        raise IndexError(f"action {a} outside 0..{table.K - 1}")
    return 1.0 - float(table.outage[a])
