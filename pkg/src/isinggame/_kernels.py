"""Compiled inner loops.

Kernels never draw random numbers themselves: callers pass blocks of
uniforms produced by numpy generators, which keeps every run reproducible
from its seed and independent of numba's global RNG.  Graphs arrive in the
CSR form of ``IsingModel.adjacency``.
"""

import math

import numpy as np
from numba import njit

_LN2 = math.log(2.0)


@njit(cache=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _logcosh(z):
    a = abs(z)
    return a + math.log1p(math.exp(-2.0 * a))


@njit(cache=True)
def _field(i, x, indptr, nbr, wts, b):
    h = b[i]
    for k in range(indptr[i], indptr[i + 1]):
        h += wts[k] * x[nbr[k]]
    return h


@njit(cache=True)
def gibbs_sweeps(indptr, nbr, wts, b, x, unif, counts, first_kept, offset):
    """Systematic-scan sweeps; sweep ``offset + s`` is counted once it reaches ``first_kept``."""
    n = b.shape[0]
    for s in range(unif.shape[0]):
        for i in range(n):
            h = _field(i, x, indptr, nbr, wts, b)
            x[i] = 1 if unif[s, i] < _sigmoid(2.0 * h) else -1
        if offset + s >= first_kept:
            for i in range(n):
                if x[i] == 1:
                    counts[i] += 1


@njit(cache=True)
def mean_field(indptr, nbr, wts, b, q, max_iters, tol):
    n = b.shape[0]
    delta = np.inf
    for it in range(1, max_iters + 1):
        delta = 0.0
        for i in range(n):
            h = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                h += wts[k] * (2.0 * q[nbr[k]] - 1.0)
            new = _sigmoid(2.0 * h)
            d = abs(new - q[i])
            if d > delta:
                delta = d
            q[i] = new
        if delta <= tol:
            return it, delta, True
    return max_iters, delta, False


@njit(cache=True)
def _half_logit(m):
    return 0.5 * math.log(m / (1.0 - m))


@njit(cache=True)
def bp_loop(indptr, nbr, wts, rev, b, msg, max_iters, tol, damping, record):
    """Damped parallel sum-product.

    ``msg[k]`` is the probability of +1 in the message sent from ``nbr[k]``
    into the row node of entry ``k``.  ``record`` (rows x K) receives the
    message vector after each of its first ``record.shape[0]`` iterations.
    """
    n = b.shape[0]
    K = msg.shape[0]
    u = np.empty(K)
    new = np.empty(K)
    delta = np.inf
    for it in range(1, max_iters + 1):
        for k in range(K):
            u[k] = _half_logit(msg[k])
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                # message i -> nbr[k]; cavity excludes what nbr[k] sent to i
                h = b[i]
                for k2 in range(indptr[i], indptr[i + 1]):
                    if k2 != k:
                        h += u[k2]
                w = wts[k]
                prop = 0.5 * (_logcosh(h + w) - _logcosh(h - w))
                new[rev[k]] = damping * msg[rev[k]] + (1.0 - damping) * _sigmoid(2.0 * prop)
        delta = 0.0
        for k in range(K):
            d = abs(new[k] - msg[k])
            if d > delta:
                delta = d
            msg[k] = new[k]
        if it <= record.shape[0]:
            record[it - 1, :] = msg
        if delta <= tol:
            return it, delta, True
    return max_iters, delta, False


@njit(cache=True)
def trw_loop(indptr, nbr, wts, rev, b, msg, rho, max_iters, tol, damping, record):
    """Damped parallel tree-reweighted sum-product with uniform edge appearance ``rho``."""
    n = b.shape[0]
    K = msg.shape[0]
    u = np.empty(K)
    new = np.empty(K)
    delta = np.inf
    for it in range(1, max_iters + 1):
        for k in range(K):
            u[k] = _half_logit(msg[k])
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += u[k]
            for k in range(indptr[i], indptr[i + 1]):
                h = b[i] + rho * s - u[k]
                w = wts[k] / rho
                prop = 0.5 * (_logcosh(h + w) - _logcosh(h - w))
                new[rev[k]] = damping * msg[rev[k]] + (1.0 - damping) * _sigmoid(2.0 * prop)
        delta = 0.0
        for k in range(K):
            d = abs(new[k] - msg[k])
            if d > delta:
                delta = d
            msg[k] = new[k]
        if it <= record.shape[0]:
            record[it - 1, :] = msg
        if delta <= tol:
            return it, delta, True
    return max_iters, delta, False


@njit(cache=True)
def beliefs(indptr, b, msg, rho):
    n = b.shape[0]
    p = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += _half_logit(msg[k])
        p[i] = _sigmoid(2.0 * (b[i] + rho * s))
    return p


@njit(cache=True)
def _record_round(x, eu, ev, node_plus, pair_counts, keys, t_local):
    n = x.shape[0]
    for i in range(n):
        if x[i] == 1:
            node_plus[i] += 1
    for e in range(eu.shape[0]):
        idx = (2 if x[eu[e]] == 1 else 0) + (1 if x[ev[e]] == 1 else 0)
        pair_counts[e, idx] += 1
    if keys.shape[0] > 0:
        key = 0
        for i in range(n):
            if x[i] == 1:
                key |= 1 << i
        keys[t_local] = key


@njit(cache=True)
def _norm_payoff(a, h, r):
    if r == 0.0:
        return 0.5
    return (a * h + r) / (2.0 * r)


@njit(cache=True)
def mwu_rounds(indptr, nbr, wts, b, R, eu, ev, lw, lsub, swap, decaying, eta, t0,
               unif, x, node_plus, pair_counts, keys):
    """Rounds ``t0+1 .. t0+len(unif)`` of simultaneous multiplicative weights.

    ``lw[i, a]`` holds log-weights of action ``a`` (0 -> -1, 1 -> +1);
    with ``swap`` the per-action sub-instances live in ``lsub[i, a, :]``.
    """
    n = b.shape[0]
    pi = np.empty(n)
    for s in range(unif.shape[0]):
        t = t0 + s + 1
        for i in range(n):
            if swap:
                qm = _sigmoid(lsub[i, 0, 1] - lsub[i, 0, 0])  # sub-instance for -1: P(+1)
                qp = _sigmoid(lsub[i, 1, 1] - lsub[i, 1, 0])  # sub-instance for +1: P(+1)
                den = qm + (1.0 - qp)
                p = 0.5 if den <= 0.0 else qm / den
            else:
                p = _sigmoid(lw[i, 1] - lw[i, 0])
            pi[i] = p
            x[i] = 1 if unif[s, i] < p else -1
        _record_round(x, eu, ev, node_plus, pair_counts, keys, s)
        et = math.sqrt(_LN2 / t) if decaying else eta
        for i in range(n):
            h = _field(i, x, indptr, nbr, wts, b)
            gm = _norm_payoff(-1.0, h, R[i])
            gp = _norm_payoff(1.0, h, R[i])
            if swap:
                for a in range(2):
                    wa = pi[i] if a == 1 else 1.0 - pi[i]
                    lsub[i, a, 0] += math.log(1.0 - et * wa * (1.0 - gm))
                    lsub[i, a, 1] += math.log(1.0 - et * wa * (1.0 - gp))
                    top = max(lsub[i, a, 0], lsub[i, a, 1])
                    lsub[i, a, 0] -= top
                    lsub[i, a, 1] -= top
            else:
                lw[i, 0] += math.log(1.0 - et * (1.0 - gm))
                lw[i, 1] += math.log(1.0 - et * (1.0 - gp))
                top = max(lw[i, 0], lw[i, 1])
                lw[i, 0] -= top
                lw[i, 1] -= top


@njit(cache=True)
def nr_rounds(indptr, nbr, wts, b, R, eu, ev, regret, mu, damp, t0, unif, x,
              node_plus, pair_counts, keys):
    """Rounds of the damped regret-matching dynamics.

    Round ``t0 + s + 1`` records the current joint action ``x``, adds its
    switching regrets to ``regret[i, a]`` (a: 0 -> -1, 1 -> +1) and then
    draws the next action from ``unif[s]``.
    """
    n = b.shape[0]
    for s in range(unif.shape[0]):
        t = t0 + s + 1
        _record_round(x, eu, ev, node_plus, pair_counts, keys, s)
        for i in range(n):
            h = _field(i, x, indptr, nbr, wts, b)
            a = 1 if x[i] == 1 else 0
            sgn = 1.0 if a == 1 else -1.0
            regret[i, a] += _norm_payoff(-sgn, h, R[i]) - _norm_payoff(sgn, h, R[i])
        for i in range(n):
            a = 1 if x[i] == 1 else 0
            sw = regret[i, a] / t / mu
            if sw < 0.0:
                sw = 0.0
            elif sw > 1.0:
                sw = 1.0
            p = 1.0 - sw if a == 1 else sw
            p = (1.0 - damp) * p + damp * 0.5
            x[i] = 1 if unif[s, i] < p else -1
