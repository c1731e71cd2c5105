"""Independent reference computations used by the tests.

Everything here is dense linear algebra written directly from the model
definition, sharing no code with the solvers under test.
"""
import itertools

import numpy as np


def source_matrices(space, acts):
    """Dense per-action transition matrices ``P[a]`` of shape (A, S, S)."""
    S, A = space.size, len(acts)
    P = np.zeros((A, S, S))
    for a in range(A):
        for s in range(S):
            P[a, s, space.succ[s]] += acts.success[a]
            P[a, s, space.fail[s]] += 1.0 - acts.success[a]
    return P


def stage_cost(space, acts, weight, beta):
    """(S, A) normalized-free stage cost ``w (delta + 1/2) + beta p``."""
    return weight * (space.delta[:, None] + 0.5) + beta * acts.powers[None, :]


def policy_value(P, cost, pol, lam):
    """Exact normalized discounted value of a deterministic policy."""
    S = len(pol)
    Pp = P[pol, np.arange(S)]
    r = cost[np.arange(S), pol]
    return np.linalg.solve(np.eye(S) - lam * Pp, (1 - lam) * r)


def brute_force_values(space, acts, weight, beta, lam):
    """Elementwise minimum of the value over every deterministic policy."""
    P = source_matrices(space, acts)
    cost = stage_cost(space, acts, weight, beta)
    best = np.full(space.size, np.inf)
    for pol in itertools.product(range(len(acts)), repeat=space.size):
        best = np.minimum(best, policy_value(P, cost, np.array(pol), lam))
    return best


def joint_oma_values(space, acts_list, weights, betas, lam, tol=1e-13):
    """Value iteration on the product space with product actions and kernels."""
    Ps = [source_matrices(space, a) for a in acts_list]
    costs = [stage_cost(space, a, w, b) for a, w, b in zip(acts_list, weights, betas)]
    S = space.size
    A0, A1 = len(acts_list[0]), len(acts_list[1])
    V = np.zeros(S * S)
    while True:
        Q = np.empty((S * S, A0 * A1))
        for a0 in range(A0):
            for a1 in range(A1):
                P = np.kron(Ps[0][a0], Ps[1][a1])
                c = np.add.outer(costs[0][:, a0], costs[1][:, a1]).ravel()
                Q[:, a0 * A1 + a1] = (1 - lam) * c + lam * P @ V
        new = Q.min(axis=1)
        if np.abs(new - V).max() < tol:
            return new, Q.argmin(axis=1)
        V = new


def dense_stationary(P):
    """Left null vector of ``P - I`` via least squares with the sum constraint."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]
