"""NOMA power tables, SIC outage evaluation and two-source decode outcomes.

All sources send ``rate`` bits in the full slot. With ``theta = 2**rate - 1``
the receiver decodes in a chosen order; the source at position ``k`` sees the
not-yet-decoded sources as noise and decodes iff
``p_k*g_k >= theta*(1 + sum_{later} p*g)`` and every earlier source decoded.
Idle sources are left out of the SIC chain.

Outcome arrays are ordered ``(SS, SF, FS, FF)`` where the first letter is
source 0 (success/failure) and the second is source 1.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .channel import RAYLEIGH, FadingModel, QuantizedChannel, sample_gain

SIC_STRICT = "sic-strict"
INDEPENDENT = "independent-factored"
COUPLING_MODES = (SIC_STRICT, INDEPENDENT)
OUTCOMES = ("SS", "SF", "FS", "FF")

MC_SAMPLES = 100_000


def decoding_orders(n: int = 2) -> list[tuple[int, ...]]:
    """All SIC orders, lexicographic; entry ``k`` is the source decoded ``k``-th."""
    return list(itertools.permutations(range(n)))


def sic_theta(rate: float) -> float:
    return math.expm1(rate * math.log(2.0))


@dataclass(frozen=True, eq=False)
class NomaActionTable:
    """Per-order power table: ``powers[n, k]`` is source ``n``'s power for action ``k``."""

    order: tuple[int, ...]
    rate: float
    powers: np.ndarray
    model: FadingModel

    def __post_init__(self):
        self.powers.setflags(write=False)

    @property
    def theta(self) -> float:
        return sic_theta(self.rate)

    @property
    def K(self) -> int:
        return self.powers.shape[1]


def build_noma_actions(q: QuantizedChannel, rate: float, order) -> NomaActionTable:
    """Back-substituted SIC powers.

    The last-decoded source gets ``theta/z_k``. A source ``j`` positions
    before the last gets ``theta*(1+theta)**j/z_k``: this meets its SINR
    target exactly when every later source sits at the lower edge of the
    same channel state.
    """
    if q.K < 2:
        raise ValueError("need K >= 2")
    if rate <= 0:
        raise ValueError("rate must be positive")
    order = tuple(int(s) for s in order)
    n = len(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of 0..{n - 1}")
    theta = sic_theta(rate)
    z = q.thresholds[1:]
    base = np.where(np.isinf(z), 0.0, theta / z)
    powers = np.empty((n, q.K))
    for pos, src in enumerate(order):
        powers[src] = base * (1.0 + theta) ** (n - 1 - pos)
    return NomaActionTable(order, rate, powers, q.model)


@dataclass(frozen=True)
class SicComponents:
    """Outage of the first-decoded source and of the last one once the first cleared.

    When the first-decoded source is idle it is not in the chain:
    ``eps_first`` is 1 and ``eps_last_given`` is the interference-free outage.
    """

    eps_first: float
    eps_last_given: float
    first_idle: bool = False


def _sic_success_rayleigh(p_first, p_last, theta):
    """Closed-form Rayleigh probabilities (first ok, both ok, last alone ok).

    Arrays broadcast; zero power means idle.
    """
    p_first = np.asarray(p_first, dtype=float)
    p_last = np.asarray(p_last, dtype=float)
    a_on = p_first > 0
    b_on = p_last > 0
    pa = np.where(a_on, p_first, 1.0)
    pb = np.where(b_on, p_last, 1.0)
    with np.errstate(over="ignore"):  # vanishing powers: exp(-inf) = 0 is the right limit
        interf = np.where(b_on, theta * pb / pa, 0.0)
        first_ok = np.where(a_on, np.exp(-theta / pa) / (1.0 + interf), 0.0)
        # Pr{first ok, last ok} = Pr{first ok} * exp(-theta/pb - theta^2/pa)
        both_ok = np.where(a_on & b_on, first_ok * np.exp(-theta / pb - theta * theta / pa), 0.0)
        last_alone = np.where(b_on, np.exp(-theta / pb), 0.0)
    return first_ok, both_ok, last_alone


def _sic_success_mc(p_first, p_last, theta, model, samples=MC_SAMPLES, seed=0):
    """Monte Carlo twin of :func:`_sic_success_rayleigh` for any fading law."""
    rng = np.random.default_rng(seed)
    ga = sample_gain(model, rng, samples)
    gb = sample_gain(model, rng, samples)
    p_first = np.atleast_1d(np.asarray(p_first, dtype=float))
    p_last = np.atleast_1d(np.asarray(p_last, dtype=float))
    p_first, p_last = np.broadcast_arrays(p_first, p_last)
    first_ok = np.empty(p_first.shape)
    both_ok = np.empty(p_first.shape)
    last_alone = np.empty(p_first.shape)
    for idx in np.ndindex(p_first.shape):
        a, b = p_first[idx], p_last[idx]
        okb = b * gb >= theta if b > 0 else np.zeros(samples, bool)
        if a > 0:
            oka = a * ga >= theta * (1.0 + b * gb)
        else:
            oka = np.zeros(samples, bool)
        first_ok[idx] = oka.mean()
        both_ok[idx] = (oka & okb).mean()
        last_alone[idx] = okb.mean()
    return first_ok, both_ok, last_alone


def sic_success(p_first, p_last, theta, model: FadingModel | None = None, conditional=True):
    """Probabilities ``(first ok, both ok, last ok with first idle)``.

    With ``conditional=False`` the last source's outage is taken without
    conditioning on the first source's decode (independent factorization),
    so ``both ok = first ok * Pr{p_last*g >= theta}``.
    """
    if model is None or model.kind == RAYLEIGH:
        first_ok, both_ok, last_alone = _sic_success_rayleigh(p_first, p_last, theta)
    else:
        first_ok, both_ok, last_alone = _sic_success_mc(p_first, p_last, theta, model)
    if not conditional:
        both_ok = first_ok * last_alone
    return first_ok, both_ok, last_alone


def sic_components(p_first, p_last, theta, model=None, conditional=True) -> SicComponents:
    first_ok, both_ok, last_alone = (float(np.squeeze(x)) for x in
                                     sic_success(p_first, p_last, theta, model, conditional))
    if p_first <= 0:
        return SicComponents(1.0, 1.0 - last_alone, first_idle=True)
    eps_last = 1.0 - both_ok / first_ok if first_ok > 0 else 1.0 - last_alone
    return SicComponents(1.0 - first_ok, eps_last)


def noma_outage_components(table: NomaActionTable, i: int, j: int, conditional=True) -> SicComponents:
    """Components for first-decoded action ``i`` and last-decoded action ``j``.

    Only the two-source chain is supported.
    """
    if len(table.order) != 2:
        raise NotImplementedError("joint SIC outcomes are implemented for two sources")
    K = table.K
    if not (0 <= i < K and 0 <= j < K):
        raise IndexError(f"action indices must lie in 0..{K - 1}")
    first, last = table.order
    return sic_components(table.powers[first, i], table.powers[last, j],
                          table.theta, table.model, conditional)


def noma_marginal_error(c: SicComponents, order=None) -> tuple[float, float]:
    """Marginal outages (first, last) chained as in SIC; per source if ``order`` given."""
    if c.first_idle:
        eps = (1.0, c.eps_last_given)
    else:
        eps = (c.eps_first, c.eps_first + (1.0 - c.eps_first) * c.eps_last_given)
    if order is None:
        return eps
    out = [0.0, 0.0]
    out[order[0]], out[order[1]] = eps
    return tuple(out)


@dataclass(frozen=True)
class JointOutcomeDist:
    ss: float
    sf: float
    fs: float
    ff: float
    coupling_mode: str = SIC_STRICT

    def as_array(self) -> np.ndarray:
        return np.array([self.ss, self.sf, self.fs, self.ff])


def joint_outcome_array(p0, p1, order, theta, mode=SIC_STRICT, model=None) -> np.ndarray:
    """Vectorized ``(..., 4)`` outcome probabilities for source powers ``p0``, ``p1``."""
    if mode not in COUPLING_MODES:
        raise ValueError(f"unknown coupling mode {mode!r}")
    p = (np.asarray(p0, dtype=float), np.asarray(p1, dtype=float))
    first, last = order
    pf, pl = np.broadcast_arrays(p[first], p[last])
    f_ok, both, alone = sic_success(pf, pl, theta, model, conditional=(mode == SIC_STRICT))
    idle_first = pf <= 0
    if mode == SIC_STRICT:
        # (first ok, last ok) joint table
        ok_ok = np.where(idle_first, 0.0, both)
        ok_fail = np.where(idle_first, 0.0, f_ok - both)
        fail_ok = np.where(idle_first, alone, 0.0)
        fail_fail = 1.0 - ok_ok - ok_fail - fail_ok
    else:
        e_first = np.where(idle_first, 1.0, 1.0 - f_ok)
        cond_last = np.where(f_ok > 0, 1.0 - both / np.where(f_ok > 0, f_ok, 1.0), 1.0 - alone)
        e_last = np.where(idle_first, 1.0 - alone, e_first + (1.0 - e_first) * cond_last)
        ok_ok = (1 - e_first) * (1 - e_last)
        ok_fail = (1 - e_first) * e_last
        fail_ok = e_first * (1 - e_last)
        fail_fail = e_first * e_last
    fail_fail = np.maximum(fail_fail, 0.0)
    if first == 0:
        out = (ok_ok, ok_fail, fail_ok, fail_fail)
    else:
        # source 0 is decoded last: swap the roles of the two letters
        out = (ok_ok, fail_ok, ok_fail, fail_fail)
    return np.stack(out, axis=-1)


def noma_joint_outcomes(table: NomaActionTable, i: int, j: int, mode: str = SIC_STRICT) -> JointOutcomeDist:
    """Outcome distribution for first-decoded action ``i`` and last-decoded action ``j``."""
    if mode not in COUPLING_MODES:
        raise ValueError(f"unknown coupling mode {mode!r}")
    K = table.K
    if not (0 <= i < K and 0 <= j < K):
        raise IndexError(f"action indices must lie in 0..{K - 1}")
    first, last = table.order
    p = [0.0, 0.0]
    p[first] = table.powers[first, i]
    p[last] = table.powers[last, j]
    arr = joint_outcome_array(p[0], p[1], table.order, table.theta, mode, table.model)
    return JointOutcomeDist(*map(float, arr), coupling_mode=mode)


def sic_decode(gains, powers, order, theta) -> tuple[bool, ...]:
    """Physical SIC decode of one slot for any number of sources."""
    active = [s for s in order if powers[s] > 0]
    ok = [False] * len(powers)
    for pos, s in enumerate(active):
        interference = sum(powers[t] * gains[t] for t in active[pos + 1:])
        if powers[s] * gains[s] >= theta * (1.0 + interference):
            ok[s] = True
        else:
            break
    return tuple(ok)
