"""Lagrangian value iteration, stationary evaluation, multiplier bisection and
policy mixing.

Values follow the normalized discounted Bellman operator
``V(s) = min_a (1-lam) * r(s, a) + lam * E[V(s')]`` with per-source reward
``w * (delta + 1/2) + beta * p``. Average ages reported by the stationary
evaluation are ``sum_s pi(s) * delta(s)``; add ``1/2`` per source for the
trapezoid AoI.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .._kernels import noma_greedy
from ..config import ScenarioConfig, SolverConfig
from .model import DeterministicPolicy, MixedPolicy, NomaModel, OmaModel, source_kernel

POWER_UNITS = {
    "oma": "in-burst power; constraint is budget/rho (per-slot energy is rho * power)",
    "noma": "per-slot power; constraint is the budget",
}


class InfeasibleBudget(ValueError):
    pass


class ChainWarning(RuntimeWarning):
    pass


def lagrangian_reward(delta, power, beta, weight):
    """``weight * (delta + 1/2) + beta * power``."""
    return weight * (np.asarray(delta, dtype=float) + 0.5) + beta * np.asarray(power, dtype=float)


@dataclass(eq=False)
class ViaResult:
    values: np.ndarray          # (N, S) for OMA, (2, S*S) for NOMA
    policy: DeterministicPolicy
    sweeps: int
    residual: float
    converged: bool
    gap: np.ndarray | None = None   # NOMA: margin to the runner-up action

    @property
    def total(self) -> np.ndarray:
        """Summed value table; for OMA laid out on the joint product space."""
        if self.policy.scheme == "noma":
            return self.values.sum(axis=0)
        out = self.values[0]
        for v in self.values[1:]:
            out = np.add.outer(out, v).ravel()
        return out


def _method(model, method: str) -> str:
    return "policy" if method == "auto" else method


# ---------------------------------------------------------------------------
# OMA: per-source tables


def _oma_q(V, space, acts, weight, beta, lam):
    base = (1.0 - lam) * weight * (space.delta + 0.5)
    cont = lam * (acts.success[None, :] * V[space.succ][:, None]
                  + (1.0 - acts.success)[None, :] * V[space.fail][:, None])
    return base[:, None] + (1.0 - lam) * beta * acts.powers[None, :] + cont


def _linear_solve(A, b, x0=None, rtol=1e-13):
    """Solve ``A x = b`` for a sparse nonsingular ``A``: BiCGSTAB with an LU fallback."""
    A = sp.csr_matrix(A)
    cols = b.reshape(len(b), -1)
    out = np.empty_like(cols, dtype=float)
    lu = None
    for k in range(cols.shape[1]):
        guess = None if x0 is None else x0.reshape(len(b), -1)[:, k]
        x, info = spla.bicgstab(A, cols[:, k], x0=guess, rtol=rtol, atol=0.0, maxiter=10_000)
        if info != 0 or not np.all(np.isfinite(x)):
            lu = lu or spla.splu(A.tocsc())
            x = lu.solve(cols[:, k])
        out[:, k] = x
    return out.reshape(b.shape)


def _oma_eval(space, acts, pol, weight, beta, lam, x0=None):
    r = (1.0 - lam) * lagrangian_reward(space.delta, acts.powers[pol], beta, weight)
    P = source_kernel(space, acts.success[pol])
    return _linear_solve(sp.identity(space.size, format="csr") - lam * P, r, x0)


def _via_oma(model: OmaModel, betas, actions, gamma_v, max_sweeps, method, v0, sources):
    sc = model.scenario
    lam = sc.discount
    space = model.space
    V = np.zeros((len(sources), space.size)) if v0 is None else np.array(v0, dtype=float)
    pol = np.zeros((len(sources), space.size), dtype=np.int64)
    residual = math.inf
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        newV = np.empty_like(V)
        for k, n in enumerate(sources):
            Q = _oma_q(V[k], space, actions[n], sc.weights[n], betas[n], lam)
            pol[k] = Q.argmin(axis=1)
            newV[k] = Q[np.arange(space.size), pol[k]]
        d = newV - V
        residual = max(abs(d.max(axis=1).sum()), abs(d.min(axis=1).sum()))
        V = newV
        if residual < gamma_v:
            break
        if method == "policy":
            V = np.stack([_oma_eval(space, actions[n], pol[k], sc.weights[n], betas[n], lam, V[k])
                          for k, n in enumerate(sources)])
    policy = DeterministicPolicy("oma", pol, [actions[n] for n in sources])
    return ViaResult(V, policy, sweeps, float(residual), residual < gamma_v)


# ---------------------------------------------------------------------------
# NOMA: shared joint decision


def _noma_greedy(model: NomaModel, V, acts, betas, lam):
    sc = model.scenario
    Wn = V[:, model.joint_next]            # (2, 4, SS)
    wsum = np.ascontiguousarray(Wn[0] + Wn[1])
    cost = (1.0 - lam) * (acts.powers @ np.asarray(betas, dtype=float))
    SS = wsum.shape[1]
    best = np.empty(SS, dtype=np.int64)
    bestval = np.empty(SS)
    gap = np.empty(SS)
    noma_greedy(wsum, np.ascontiguousarray(acts.probs), cost, lam, best, bestval, gap)
    probs = acts.probs[best]               # (SS, 4)
    newV = np.empty_like(V)
    for n in range(2):
        r = lagrangian_reward(model.joint_delta[n], acts.powers[best, n], betas[n], sc.weights[n])
        newV[n] = (1.0 - lam) * r + lam * np.einsum("so,os->s", probs, Wn[n])
    return newV, best, gap


def _noma_eval(model: NomaModel, acts, best, betas, x0=None):
    sc = model.scenario
    lam = sc.discount
    P = model.transition_matrix(DeterministicPolicy("noma", best, acts))
    A = sp.identity(P.shape[0], format="csr") - lam * P
    r = np.stack([(1.0 - lam) * lagrangian_reward(model.joint_delta[n], acts.powers[best, n],
                                                 betas[n], sc.weights[n]) for n in range(2)], axis=1)
    return _linear_solve(A, r, None if x0 is None else x0.T).T


def _via_noma(model: NomaModel, betas, acts, gamma_v, max_sweeps, method, v0):
    lam = model.scenario.discount
    SS = model.space.size ** 2
    V = np.zeros((2, SS)) if v0 is None else np.array(v0, dtype=float)
    residual = math.inf
    sweeps = 0
    best = gap = None
    while sweeps < max_sweeps:
        sweeps += 1
        newV, best, gap = _noma_greedy(model, V, acts, betas, lam)
        residual = float(np.abs(newV.sum(axis=0) - V.sum(axis=0)).max())
        V = newV
        if residual < gamma_v:
            break
        if method == "policy":
            V = _noma_eval(model, acts, best, betas, V)
    policy = DeterministicPolicy("noma", best, acts)
    return ViaResult(V, policy, sweeps, residual, residual < gamma_v, gap)


def value_iteration(model, betas, actions=None, gamma_v: float = 1e-6, max_sweeps: int = 10_000,
                    method: str = "auto", v0=None, sources=None) -> ViaResult:
    """Solve the Lagrangian MDP at fixed multipliers ``betas``.

    ``method="jacobi"`` runs plain synchronous sweeps from ``V = 0``;
    ``"policy"`` alternates a greedy sweep with exact evaluation of the
    greedy policy. Both stop once the summed table moves by less than
    ``gamma_v`` in sup norm, and both return the greedy policy of the final
    table. For OMA, ``sources`` restricts the solve to a subset of sources.
    """
    betas = np.broadcast_to(np.asarray(betas, dtype=float), (model.n_sources,))
    if np.any(betas < 0):
        raise ValueError("multipliers must be nonnegative")
    method = _method(model, method)
    if model.scheme == "oma":
        actions = model.actions if actions is None else actions
        sources = list(range(model.n_sources)) if sources is None else list(sources)
        return _via_oma(model, betas, actions, gamma_v, max_sweeps, method, v0, sources)
    actions = model.actions if actions is None else actions
    return _via_noma(model, betas, actions, gamma_v, max_sweeps, method, v0)


# ---------------------------------------------------------------------------
# Stationary evaluation


def _period(P: sp.csr_matrix) -> int:
    """Period of an irreducible chain: gcd of level differences along edges."""
    depth = csgraph.shortest_path(P, method="D", unweighted=True, indices=0).astype(np.int64)
    coo = P.tocoo()
    g = np.gcd.reduce(np.abs(depth[coo.row] + 1 - depth[coo.col]))
    return int(g) if g else 1


def _cesaro(P: sp.csr_matrix, start: int, reach, labels, closed) -> np.ndarray:
    """Exact Cesaro limit from ``start``: each closed class's stationary law
    weighted by its absorption probability."""
    n = P.shape[0]
    pi = np.zeros(n)
    in_closed = np.isin(labels, closed)
    trans = reach[~in_closed]
    for k in closed:
        cls = reach[labels == k]
        PC = P[cls][:, cls].tocsr()
        law = np.ones(1) if len(cls) == 1 else _renewal_solve(PC, 0)
        if start in cls:
            weight = 1.0
        elif len(trans) and start in trans:
            PT = P[trans][:, trans]
            b = np.asarray(P[trans][:, cls].sum(axis=1)).ravel()
            h = spla.spsolve((sp.identity(len(trans), format="csc") - PT).tocsc(), b)
            weight = float(np.atleast_1d(h)[np.searchsorted(trans, start)])
        else:
            weight = 0.0
        pi[cls] += weight * law
    return pi / pi.sum()


def _power_iteration(P: sp.csr_matrix, start: int, tol: float, max_iter: int):
    x = np.zeros(P.shape[0])
    x[start] = 1.0
    PT = P.T.tocsr()
    for _ in range(max_iter):
        y = PT @ x
        if np.abs(y - x).sum() < tol:
            return y / y.sum()
        x = y
    return None


def _renewal_solve(PC: sp.csr_matrix, ref: int) -> np.ndarray:
    """Direct solve on an irreducible class via expected visits per
    excursion from ``ref``."""
    m = PC.shape[0]
    keep = np.delete(np.arange(m), ref)
    A = (sp.identity(m - 1, format="csc") - PC[keep][:, keep].T).tocsc()
    b = PC[ref, keep].toarray().ravel()
    pi = np.insert(spla.splu(A).solve(b), ref, 1.0)
    return pi / pi.sum()


def stationary_distribution(P, start: int = 0, tol: float = 1e-12,
                            max_iter: int = 100_000) -> np.ndarray:
    """Stationary law of the chain started from ``start``.

    Power iteration to an L1 step below ``tol``; if that stalls, a direct
    solve on the recurrent class. Several reachable closed classes or a
    periodic class trigger a :class:`ChainWarning` and a Cesaro average.
    """
    P = sp.csr_matrix(P, dtype=float)
    P.eliminate_zeros()
    n = P.shape[0]
    reach = np.sort(csgraph.breadth_first_order(P, start, directed=True, return_predecessors=False))
    sub = P[reach][:, reach]
    ncomp, labels = csgraph.connected_components(sub, directed=True, connection="strong")
    coo = sub.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    closed = np.setdiff1d(np.arange(ncomp), np.unique(labels[coo.row[leaving]]))
    if len(closed) != 1:
        warnings.warn(f"{len(closed)} closed classes reachable; using Cesaro average", ChainWarning)
        return _cesaro(P, start, reach, labels, closed)
    cls = reach[labels == closed[0]]
    PC = P[cls][:, cls].tocsr()
    if len(cls) == 1:
        pi = np.zeros(n)
        pi[cls] = 1.0
        return pi
    if _period(PC) > 1:
        warnings.warn("periodic recurrent class; using Cesaro average", ChainWarning)
        return _cesaro(P, start, reach, labels, closed)
    pi = _power_iteration(P, start, tol, max_iter)
    if pi is None:
        pi = np.zeros(n)
        pi[cls] = _renewal_solve(PC, 0)
    return pi


@dataclass(eq=False)
class PolicyMetrics:
    ages: np.ndarray      # per-source mean age (no 1/2 offset)
    powers: np.ndarray    # per-source mean power
    dist: list            # stationary law(s): one per source (OMA) or one joint (NOMA)


def evaluate_policy(model, policy: DeterministicPolicy) -> PolicyMetrics:
    space = model.space
    if model.scheme == "oma":
        ages, powers, dists = [], [], []
        for n in range(len(policy.actions)):
            pi = stationary_distribution(model.transition_matrix(policy, n), start=space.index(1, 1))
            acts = policy.action_set[n]
            ages.append(pi @ space.delta)
            powers.append(pi @ acts.powers[policy.actions[n]])
            dists.append(pi)
        return PolicyMetrics(np.array(ages), np.array(powers), dists)
    start = space.index(1, 1) * space.size + space.index(1, 1)
    pi = stationary_distribution(model.transition_matrix(policy), start=start)
    ages = model.joint_delta @ pi
    powers = pi @ policy.powers()
    return PolicyMetrics(np.asarray(ages, dtype=float), np.asarray(powers, dtype=float), [pi])


# ---------------------------------------------------------------------------
# Multiplier search and mixing


def mixing_coefficient(p_minus: float, p_plus: float, constraint: float) -> float:
    """Weight on the beta-minus policy so the mixture spends ``constraint``."""
    if p_minus == p_plus:
        return 1.0
    return float(min(1.0, max(0.0, (constraint - p_plus) / (p_minus - p_plus))))


@dataclass
class SolveReport:
    scheme: str
    ages: list
    powers: list
    constraints: list
    weights: list
    beta_minus: list
    beta_plus: list
    xi: list
    ages_minus: list
    ages_plus: list
    powers_minus: list
    powers_plus: list
    weighted_age: float
    status: list
    bisection_steps: int
    sweeps: int
    residual: float
    converged: bool
    power_units: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def weighted_aoi(self) -> float:
        """Trapezoid AoI: the mean age plus 1/2 per unit weight."""
        return self.weighted_age + 0.5 * sum(self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighted_aoi"] = self.weighted_aoi
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass(eq=False)
class Solution:
    report: SolveReport
    policy: MixedPolicy
    model: object


@dataclass(eq=False)
class _Point:
    betas: np.ndarray
    via: ViaResult
    metrics: PolicyMetrics


class _Evaluator:
    """Solves and evaluates at a multiplier vector, warm-starting from the
    nearest recent solve and counting work."""

    keep = 6

    def __init__(self, model, solver: SolverConfig, actions=None, sources=None):
        self.model = model
        self.solver = solver
        self.actions = actions
        if sources is None and model.scheme == "oma":
            sources = list(range(model.n_sources))
        self.sources = sources
        self.points: list[_Point] = []
        self.calls = 0
        self.sweeps = 0
        self.residual = 0.0
        self.converged = True

    def __call__(self, betas) -> _Point:
        betas = np.array(betas, dtype=float)
        v0 = None
        if self.points:
            near = min(self.points, key=lambda p: np.abs(p.betas - betas).sum())
            v0 = near.via.values
        via = value_iteration(self.model, betas, self.actions, self.solver.gamma_v,
                              self.solver.max_sweeps, self.solver.method, v0, self.sources)
        self.sweeps += via.sweeps
        self.residual = max(self.residual, via.residual)
        self.converged &= via.converged
        if self.model.scheme == "oma":
            metrics = _metrics_subset(self.model, via.policy, self.sources)
        else:
            metrics = evaluate_policy(self.model, via.policy)
        point = _Point(betas, via, metrics)
        self.points = self.points[-(self.keep - 1):] + [point]
        self.calls += 1
        return point


def _metrics_subset(model: OmaModel, policy, sources):
    """OMA metrics for the solved sources; other entries are NaN."""
    space = model.space
    ages = np.full(model.n_sources, np.nan)
    powers = np.full(model.n_sources, np.nan)
    dists = [None] * model.n_sources
    for k, n in enumerate(sources):
        acts = policy.action_set[k]
        pi = stationary_distribution(source_kernel(space, acts.success[policy.actions[k]]),
                                     start=space.index(1, 1))
        ages[n] = pi @ space.delta
        powers[n] = pi @ acts.powers[policy.actions[k]]
        dists[n] = pi
    return PolicyMetrics(ages, powers, dists)


def bisect_multiplier(evaluate, constraint: float, gamma_beta: float, beta_cap: float,
                      coord: int = 0, base=None):
    """Bracket the multiplier of coordinate ``coord`` with the others held at ``base``.

    Returns ``(minus, plus, steps, slack)`` where ``minus``/``plus`` are the
    evaluated points at ``beta-``/``beta+``; ``slack`` means the constraint
    holds already at ``beta = 0``.
    """
    base = np.zeros(1) if base is None else np.array(base, dtype=float)

    def at(b):
        x = base.copy()
        x[coord] = b
        return evaluate(x)

    steps = 1
    zero = at(0.0)
    if zero.metrics.powers[coord] <= constraint:
        return zero, zero, steps, True
    lo, hi = zero, None
    b = 1.0
    while True:
        p = at(b)
        steps += 1
        if p.metrics.powers[coord] <= constraint:
            hi = p
            break
        lo = p
        b *= 2.0
        if b > beta_cap:
            raise InfeasibleBudget(f"power {constraint:g} not reached below beta cap {beta_cap:g}")
    while hi.betas[coord] - lo.betas[coord] > gamma_beta:
        p = at(0.5 * (lo.betas[coord] + hi.betas[coord]))
        steps += 1
        if p.metrics.powers[coord] > constraint:
            lo = p
        else:
            hi = p
    return lo, hi, steps, False


def _assemble(model, minus: list, plus: list, slack: list, steps, ev_sweeps, residual, converged):
    """Build the mixed policy and report from per-source bracket endpoints.

    ``minus[n]``/``plus[n]`` are (ages, powers, betas, policy) tuples for source n.
    """
    sc = model.scenario
    N = model.n_sources
    xi, ages, powers = [], [], []
    for n in range(N):
        a_m, p_m = minus[n][0], minus[n][1]
        a_p, p_p = plus[n][0], plus[n][1]
        x = 1.0 if slack[n] else mixing_coefficient(p_m, p_p, model.constraints[n])
        xi.append(x)
        ages.append(x * a_m + (1 - x) * a_p)
        powers.append(x * p_m + (1 - x) * p_p)
    report = SolveReport(
        scheme=model.scheme,
        ages=ages,
        powers=powers,
        constraints=list(model.constraints),
        weights=list(sc.weights),
        beta_minus=[minus[n][2] for n in range(N)],
        beta_plus=[plus[n][2] for n in range(N)],
        xi=xi,
        ages_minus=[minus[n][0] for n in range(N)],
        ages_plus=[plus[n][0] for n in range(N)],
        powers_minus=[minus[n][1] for n in range(N)],
        powers_plus=[plus[n][1] for n in range(N)],
        weighted_age=float(np.dot(sc.weights, ages)),
        status=["slack" if s else "binding" for s in slack],
        bisection_steps=int(steps),
        sweeps=int(ev_sweeps),
        residual=float(residual),
        converged=bool(converged),
        power_units=POWER_UNITS[model.scheme],
    )
    return _jsonable_report(report)


def _jsonable_report(report: SolveReport) -> SolveReport:
    for name in ("ages", "powers", "constraints", "weights", "beta_minus", "beta_plus", "xi",
                 "ages_minus", "ages_plus", "powers_minus", "powers_plus"):
        setattr(report, name, [float(v) for v in getattr(report, name)])
    return report


def _solve_oma(model: OmaModel, solver: SolverConfig, actions=None) -> Solution:
    actions = model.actions if actions is None else actions
    minus, plus, slack = [], [], []
    pol_m, pol_p = [], []
    steps = sweeps = 0
    residual, converged = 0.0, True
    for n in range(model.n_sources):
        ev = _Evaluator(model, solver, actions, sources=[n])
        lo, hi, k, s = bisect_multiplier(ev, model.constraints[n], solver.gamma_beta,
                                         solver.beta_cap, coord=n, base=np.zeros(model.n_sources))
        steps += k
        sweeps += ev.sweeps
        residual = max(residual, ev.residual)
        converged &= ev.converged
        for pt, out, pols in ((lo, minus, pol_m), (hi, plus, pol_p)):
            out.append((float(pt.metrics.ages[n]), float(pt.metrics.powers[n]), float(pt.betas[n])))
            pols.append(pt.via.policy.actions[0])
        slack.append(s)
    mixed = MixedPolicy(DeterministicPolicy("oma", np.stack(pol_m), actions),
                        DeterministicPolicy("oma", np.stack(pol_p), actions), ())
    report = _assemble(model, minus, plus, slack, steps, sweeps, residual, converged)
    mixed = MixedPolicy(mixed.minus, mixed.plus, tuple(report.xi))
    return Solution(report, mixed, model)


def _bracket_ok(lo: _Point, hi: _Point, constraints, slack) -> bool:
    for n in range(len(constraints)):
        if slack[n]:
            continue
        if hi.metrics.powers[n] > constraints[n] or lo.metrics.powers[n] <= constraints[n]:
            return False
    return True


def _coord_bisect(ev, c, n, base, lo_n, hi_n, gamma_beta, beta_cap):
    """Bracket coordinate ``n`` starting from ``[lo_n, hi_n]``, widening as needed."""
    def at(b):
        x = base.copy()
        x[n] = b
        return ev(x)

    width = max(hi_n - lo_n, gamma_beta)
    hi = at(hi_n)
    while hi.metrics.powers[n] > c:
        lo_n, hi_n = hi_n, hi_n + width
        width *= 2.0
        if hi_n > beta_cap:
            raise InfeasibleBudget("NOMA budget not reached below the multiplier cap")
        hi = at(hi_n)
    lo = at(lo_n) if lo_n < hi_n else hi
    while lo.metrics.powers[n] <= c:
        if lo_n <= 0.0:
            return lo, lo
        hi, hi_n = lo, lo_n
        lo_n = max(0.0, lo_n - width)
        width *= 2.0
        lo = at(lo_n)
    while hi_n - lo_n > gamma_beta:
        mid = 0.5 * (lo_n + hi_n)
        p = at(mid)
        if p.metrics.powers[n] > c:
            lo, lo_n = p, mid
        else:
            hi, hi_n = p, mid
    return lo, hi


def _solve_noma(model: NomaModel, solver: SolverConfig, actions=None) -> Solution:
    """Two-multiplier search.

    Both multipliers are first bisected together. If the two endpoint
    policies do not bracket every binding constraint (the sources' powers
    react to each other's multiplier), coordinate-wise sweeps re-bracket each
    multiplier with the other held fixed. If those stall, the search falls
    back to one bisection along the current multiplier direction, which
    always yields a feasible upper endpoint.
    """
    ev = _Evaluator(model, solver, actions)
    c = model.constraints
    gb = solver.gamma_beta
    zero = ev(np.zeros(2))
    slack = [bool(zero.metrics.powers[n] <= c[n]) for n in range(2)]
    active = [n for n in range(2) if not slack[n]]
    lo_pt = hi_pt = zero
    phase = "slack"

    def feasible(p):
        return all(p.metrics.powers[n] <= c[n] for n in active)

    def ray(direction):
        lo_t, lo_p = 0.0, zero
        t = 1.0
        while True:
            p = ev(t * direction)
            if feasible(p):
                hi_t, hi_p = t, p
                break
            lo_t, lo_p = t, p
            t *= 2.0
            if t * direction.max() > solver.beta_cap:
                raise InfeasibleBudget("NOMA budget not reached below the multiplier cap")
        while (hi_t - lo_t) * direction.max() > gb:
            mid = 0.5 * (lo_t + hi_t)
            p = ev(mid * direction)
            if feasible(p):
                hi_t, hi_p = mid, p
            else:
                lo_t, lo_p = mid, p
        return lo_p, hi_p

    if active:
        phase = "simultaneous"
        direction = np.zeros(2)
        direction[active] = 1.0
        lo_pt, hi_pt = ray(direction)
        lo_b, hi_b = lo_pt.betas.copy(), hi_pt.betas.copy()
        # per-coordinate refinement of the common bracket
        while max(hi_b[n] - lo_b[n] for n in active) > gb:
            mid = 0.5 * (lo_b + hi_b)
            p = ev(mid)
            for n in active:
                if p.metrics.powers[n] > c[n]:
                    lo_b[n] = mid[n]
                else:
                    hi_b[n] = mid[n]
        lo_pt, hi_pt = ev(lo_b), ev(hi_b)
        if not _bracket_ok(lo_pt, hi_pt, c, slack):
            phase = "alternating"
            seen = []
            for _ in range(solver.max_alternations):
                before = np.concatenate([lo_b, hi_b])
                for n in active:
                    lo, hi = _coord_bisect(ev, c[n], n, hi_b.copy(), lo_b[n], hi_b[n], gb,
                                           solver.beta_cap)
                    lo_b[n], hi_b[n] = lo.betas[n], hi.betas[n]
                lo_pt, hi_pt = ev(lo_b), ev(hi_b)
                if _bracket_ok(lo_pt, hi_pt, c, slack):
                    break
                after = np.concatenate([lo_b, hi_b])
                stalled = np.abs(after - before).max() <= 4 * gb
                if stalled or any(np.array_equal(after, s) for s in seen):
                    break
                seen.append(after)
        if not _bracket_ok(lo_pt, hi_pt, c, slack):
            phase = "ray"
            direction = np.maximum(hi_b, gb) / np.maximum(hi_b, gb).max()
            direction[slack] = 0.0
            lo_pt, hi_pt = ray(direction)
    minus = [(float(lo_pt.metrics.ages[n]), float(lo_pt.metrics.powers[n]), float(lo_pt.betas[n]))
             for n in range(2)]
    plus = [(float(hi_pt.metrics.ages[n]), float(hi_pt.metrics.powers[n]), float(hi_pt.betas[n]))
            for n in range(2)]
    report = _assemble(model, minus, plus, slack, ev.calls, ev.sweeps, ev.residual, ev.converged)
    report.extra["search"] = phase
    mixed = MixedPolicy(lo_pt.via.policy, hi_pt.via.policy, tuple(report.xi))
    return Solution(report, mixed, model)


def constrained_solve(model, solver: SolverConfig = SolverConfig(), actions=None) -> Solution:
    """Optimal mixed policy under the per-source average power constraints."""
    if model.scheme == "oma":
        return _solve_oma(model, solver, actions)
    return _solve_noma(model, solver, actions)


def fixed_power_solve(model, solver: SolverConfig = SolverConfig()) -> Solution:
    """Baseline: every source always transmits at its constraint level.

    NOMA still picks the decoding order per state (beta = 0 solve over the
    two orders).
    """
    if model.scheme == "oma":
        acts = model.fixed_power_actions()
        pol = DeterministicPolicy("oma", np.zeros((model.n_sources, model.space.size), dtype=np.int64), acts)
    else:
        acts = model.fixed_power_actions()
        pol = value_iteration(model, np.zeros(2), acts, solver.gamma_v, solver.max_sweeps,
                              solver.method).policy
    m = evaluate_policy(model, pol)
    pts = [(float(m.ages[n]), float(m.powers[n]), 0.0) for n in range(model.n_sources)]
    report = _assemble(model, pts, pts, [True] * model.n_sources, 0, 0, 0.0, True)
    report.status = ["fixed-power"] * model.n_sources
    return Solution(report, MixedPolicy(pol, pol, tuple(report.xi)), model)


def power_curve(model, betas, solver: SolverConfig = SolverConfig()) -> np.ndarray:
    """Per-source average power of the greedy policy at each common multiplier."""
    ev = _Evaluator(model, solver)
    return np.array([ev(np.full(model.n_sources, b)).metrics.powers for b in betas])


def optimize_rho(scenario: ScenarioConfig, grid, solver: SolverConfig = SolverConfig()):
    """Grid search over the OMA slot split ``(rho, 1 - rho)``.

    Returns ``(rho_star, rows)`` with one ``(rho, weighted_age)`` row per grid
    point. Near-ties (relative 1e-9) resolve toward 0.5.
    """
    if scenario.n_sources != 2:
        raise ValueError("slot-split search is defined for two sources")
    grid = [float(r) for r in grid]
    if len(grid) < 3 or not all(0 < r < 1 for r in grid):
        raise ValueError("need at least three grid points in (0, 1)")
    rows = []
    for r in grid:
        sol = constrained_solve(OmaModel(scenario.replace(rho=(r, 1.0 - r))), solver)
        rows.append((r, sol.report.weighted_age))
    best = min(v for _, v in rows)
    ties = [r for r, v in rows if v <= best * (1 + 1e-9)]
    rho_star = min(ties, key=lambda r: (abs(r - 0.5), r))
    return rho_star, rows


def build_and_solve(scenario: ScenarioConfig, scheme: str, solver: SolverConfig = SolverConfig()):
    model = OmaModel(scenario) if scheme == "oma" else NomaModel(scenario)
    return constrained_solve(model, solver)


# ---------------------------------------------------------------------------
# Export

POLICY_COLUMNS = ("state", "m_1", "delta_1", "m_2", "delta_2", "index_1", "index_2",
                  "order", "power_1", "power_2")


def policy_rows(model, policy: DeterministicPolicy):
    """Joint-state rows with 1-based action indices; ``order`` lists sources
    (1-based) in decoding order, empty for OMA."""
    space = model.space
    S = space.size
    if model.n_sources != 2:
        raise ValueError("policy export is laid out for two sources")
    for s in range(S * S):
        i0, i1 = divmod(s, S)
        if policy.scheme == "oma":
            a = (policy.actions[0][i0], policy.actions[1][i1])
            p = (policy.action_set[0].powers[a[0]], policy.action_set[1].powers[a[1]])
            order = ""
            idx = (a[0] + 1, a[1] + 1)
        else:
            a = policy.actions[s]
            acts = policy.action_set
            p = tuple(acts.powers[a])
            idx = tuple(int(k) + 1 for k in acts.index[a])
            order = "-".join(str(k + 1) for k in acts.orders[acts.order[a]])
        yield (s, int(space.m[i0]), int(space.delta[i0]), int(space.m[i1]), int(space.delta[i1]),
               int(idx[0]), int(idx[1]), order, repr(float(p[0])), repr(float(p[1])))


def write_policy_csv(path, model, policy: DeterministicPolicy) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(POLICY_COLUMNS)
        w.writerows(policy_rows(model, policy))
