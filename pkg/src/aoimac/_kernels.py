"""Compiled inner loops. Every kernel here has a plain-Python counterpart
elsewhere in the package that the tests compare it against."""
from __future__ import annotations

import math

from numba import njit


@njit(cache=True)
def noma_greedy(wsum, probs, cost, lam, best, bestval, gap):
    """Per joint state, minimize ``cost[a] + lam * probs[a] . wsum[:, s]``.

    Ties go to the lowest action index. ``gap`` receives the margin to the
    runner-up action.
    """
    n_states = wsum.shape[1]
    n_actions = probs.shape[0]
    for s in range(n_states):
        w0 = wsum[0, s]
        w1 = wsum[1, s]
        w2 = wsum[2, s]
        w3 = wsum[3, s]
        bv = math.inf
        sv = math.inf
        ba = 0
        for a in range(n_actions):
            v = cost[a] + lam * (probs[a, 0] * w0 + probs[a, 1] * w1
                                 + probs[a, 2] * w2 + probs[a, 3] * w3)
            if v < bv:
                sv = bv
                bv = v
                ba = a
            elif v < sv:
                sv = v
        best[s] = ba
        bestval[s] = bv
        gap[s] = sv - bv


@njit(cache=True)
def sic_outcome(g0, g1, p0, p1, first, theta):
    """Two-source SIC decode with ``first`` decoded first; idle sources skip the chain.

    Returns (source-0 ok, source-1 ok).
    """
    if first == 0:
        pf, gf, pl, gl = p0, g0, p1, g1
    else:
        pf, gf, pl, gl = p1, g1, p0, g0
    ok_f = False
    ok_l = False
    if pf > 0.0:
        interf = pl * gl if pl > 0.0 else 0.0
        ok_f = pf * gf >= theta * (1.0 + interf)
        if ok_f and pl > 0.0:
            ok_l = pl * gl >= theta
    elif pl > 0.0:
        ok_l = pl * gl >= theta
    if first == 0:
        return ok_f, ok_l
    return ok_l, ok_f


@njit(cache=True)
def factored_outcome(probs_row, u):
    """Draw (source-0 ok, source-1 ok) from an (SS, SF, FS, FF) row."""
    c = probs_row[0]
    if u < c:
        return True, True
    c += probs_row[1]
    if u < c:
        return True, False
    c += probs_row[2]
    if u < c:
        return False, True
    return False, False


@njit(cache=True)
def advance(idx, ok, succ, fail):
    return succ[idx] if ok else fail[idx]


@njit(cache=True)
def sim_oma_chunk(state, succ, fail, m_of, delta, pol_m, pol_p, xi, thr, powers,
                  gains, coins, t0, acc_age, acc_pow, acc_succ, acc_att, visits,
                  tr_slot, tr_m, tr_d, tr_a, tr_out):
    """Advance every OMA source ``gains.shape[0]`` slots in place."""
    n_src = state.shape[0]
    T = gains.shape[0]
    L = tr_slot.shape[0]
    for t in range(T):
        slot = t0 + t
        pos = slot % L if L > 0 else 0
        for n in range(n_src):
            s = state[n]
            a = pol_m[n, s] if coins[t, n] < xi[n] else pol_p[n, s]
            ok = gains[t, n] >= thr[n, a]
            acc_age[n] += delta[s]
            acc_pow[n] += powers[n, a]
            visits[n, s] += 1
            if powers[n, a] > 0.0:
                acc_att[n] += 1
                if ok:
                    acc_succ[n] += 1
            if L > 0:
                tr_m[pos, n] = m_of[s]
                tr_d[pos, n] = delta[s]
                tr_a[pos, n] = a
                tr_out[pos, n] = ok
            state[n] = succ[s] if ok else fail[s]
        if L > 0:
            tr_slot[pos] = slot


@njit(cache=True)
def sim_noma_chunk(state, succ, fail, m_of, delta, S, pol_m, pol_p, xi, powers, order,
                   probs, theta, factored, gains, coins, unif, t0,
                   acc_age, acc_pow, acc_succ, acc_att, visits,
                   tr_slot, tr_m, tr_d, tr_a, tr_ord, tr_out):
    """Advance the two-source NOMA system ``gains.shape[0]`` slots in place."""
    T = gains.shape[0]
    L = tr_slot.shape[0]
    for t in range(T):
        slot = t0 + t
        s0 = state[0]
        s1 = state[1]
        js = s0 * S + s1
        a = pol_m[js] if coins[t] < xi else pol_p[js]
        p0 = powers[a, 0]
        p1 = powers[a, 1]
        if factored:
            ok0, ok1 = factored_outcome(probs[a], unif[t])
        else:
            ok0, ok1 = sic_outcome(gains[t, 0], gains[t, 1], p0, p1, order[a], theta)
        acc_age[0] += delta[s0]
        acc_age[1] += delta[s1]
        acc_pow[0] += p0
        acc_pow[1] += p1
        visits[js] += 1
        if p0 > 0.0:
            acc_att[0] += 1
            if ok0:
                acc_succ[0] += 1
        if p1 > 0.0:
            acc_att[1] += 1
            if ok1:
                acc_succ[1] += 1
        if L > 0:
            pos = slot % L
            tr_slot[pos] = slot
            tr_m[pos, 0] = m_of[s0]
            tr_m[pos, 1] = m_of[s1]
            tr_d[pos, 0] = delta[s0]
            tr_d[pos, 1] = delta[s1]
            tr_a[pos, 0] = a
            tr_a[pos, 1] = a
            tr_ord[pos] = order[a]
            tr_out[pos, 0] = ok0
            tr_out[pos, 1] = ok1
        state[0] = succ[s0] if ok0 else fail[s0]
        state[1] = succ[s1] if ok1 else fail[s1]


@njit(cache=True)
def _argmin_row(row):
    best = 0
    bv = row[0]
    for k in range(1, row.shape[0]):
        if row[k] < bv:
            bv = row[k]
            best = k
    return best


@njit(cache=True)
def _eps_greedy(row, eps, u_eps, u_act):
    if u_eps < eps:
        k = int(u_act * row.shape[0])
        return min(k, row.shape[0] - 1)
    return _argmin_row(row)


@njit(cache=True)
def _schedule(i, eps0, tau, eps_min):
    e = eps0 / (1.0 + i / tau)
    return e if e > eps_min else eps_min


@njit(cache=True)
def _q_step(Q, counts, n, s, a, r, s2, lam, i, lr_mode, h, rbar, eta):
    # lr_mode 0: 1/sqrt(i); 1: 1/sqrt(n(s,a)); 2: (h+1)/(h+n(s,a)).
    # eta > 0 centers rewards on a running mean rbar[n]; argmin Q is unaffected.
    if eta > 0.0:
        rbar[n] += eta * (r - rbar[n])
        r -= rbar[n]
    counts[n, s, a] += 1
    c = counts[n, s, a]
    if lr_mode == 1:
        alpha = 1.0 / math.sqrt(c)
    elif lr_mode == 2:
        alpha = (h + 1.0) / (h + c)
    else:
        alpha = 1.0 / math.sqrt(i)
    target = r + lam * Q[n, s2, _argmin_row(Q[n, s2])]
    Q[n, s, a] += alpha * (target - Q[n, s, a])


@njit(cache=True)
def rl_oma_chunk(Q, counts, state, succ, fail, delta, weights, powers, thr, betas, targets,
                 lam, gains, u_eps, u_act, step0, eps0, tau, eps_min, learn, lr_mode, lr_h, rbar, eta,
                 beta_step, zeta0, acc_age, acc_pow):
    """Independent per-source Q-learning (or greedy play when ``learn`` is
    False) over ``gains.shape[0]`` slots. Returns the last global step."""
    T = gains.shape[0]
    N = state.shape[0]
    i = step0
    for t in range(T):
        i += 1
        eps = _schedule(i, eps0, tau, eps_min) if learn else 0.0
        for n in range(N):
            s = state[n]
            a = _eps_greedy(Q[n, s], eps, u_eps[t, n], u_act[t, n])
            ok = gains[t, n] >= thr[n, a]
            s2 = succ[s] if ok else fail[s]
            p = powers[n, a]
            acc_age[n] += delta[s]
            acc_pow[n] += p
            if learn:
                r = weights[n] * (delta[s2] + 0.5) + betas[n] * p
                _q_step(Q, counts, n, s, a, r, s2, lam, i, lr_mode, lr_h, rbar, eta)
                if beta_step:
                    b = betas[n] + zeta0 / i * (p - targets[n])
                    betas[n] = b if b > 0.0 else 0.0
            state[n] = s2
    return i


@njit(cache=True)
def rl_noma_chunk(Q, counts, state, succ, fail, delta, weights, npow, firsts, probs, factored,
                  theta, betas, targets, lam, gains, u_eps, u_act, unif, step0, eps0, tau,
                  eps_min, learn, lr_mode, lr_h, rbar, eta, beta_step, zeta0, acc_age, acc_pow, order_count):
    """Two decentralized learners sharing the NOMA slot. Each slot both
    decoding orders are evaluated on the same gains and the one with the
    smaller summed reward is committed (ties to order 0)."""
    T = gains.shape[0]
    i = step0
    for t in range(T):
        i += 1
        eps = _schedule(i, eps0, tau, eps_min) if learn else 0.0
        s0 = state[0]
        s1 = state[1]
        a0 = _eps_greedy(Q[0, s0], eps, u_eps[t, 0], u_act[t, 0])
        a1 = _eps_greedy(Q[1, s1], eps, u_eps[t, 1], u_act[t, 1])
        best = math.inf
        bd = 0
        bn0 = s0
        bn1 = s1
        br0 = 0.0
        br1 = 0.0
        for d in range(npow.shape[0]):
            p0 = npow[d, 0, a0]
            p1 = npow[d, 1, a1]
            if factored:
                ok0, ok1 = factored_outcome(probs[d, a0, a1], unif[t])
            else:
                ok0, ok1 = sic_outcome(gains[t, 0], gains[t, 1], p0, p1, firsts[d], theta)
            n0 = succ[s0] if ok0 else fail[s0]
            n1 = succ[s1] if ok1 else fail[s1]
            r0 = weights[0] * (delta[n0] + 0.5) + betas[0] * p0
            r1 = weights[1] * (delta[n1] + 0.5) + betas[1] * p1
            if r0 + r1 < best:
                best = r0 + r1
                bd = d
                bn0 = n0
                bn1 = n1
                br0 = r0
                br1 = r1
        p0 = npow[bd, 0, a0]
        p1 = npow[bd, 1, a1]
        order_count[bd] += 1
        acc_age[0] += delta[s0]
        acc_age[1] += delta[s1]
        acc_pow[0] += p0
        acc_pow[1] += p1
        if learn:
            _q_step(Q, counts, 0, s0, a0, br0, bn0, lam, i, lr_mode, lr_h, rbar, eta)
            _q_step(Q, counts, 1, s1, a1, br1, bn1, lam, i, lr_mode, lr_h, rbar, eta)
            if beta_step:
                b = betas[0] + zeta0 / i * (p0 - targets[0])
                betas[0] = b if b > 0.0 else 0.0
                b = betas[1] + zeta0 / i * (p1 - targets[1])
                betas[1] = b if b > 0.0 else 0.0
        state[0] = bn0
        state[1] = bn1
    return i
