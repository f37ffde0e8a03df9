"""Log-space HMM recursions (forward filter, backward sampler, Viterbi).

All kernels take the per-frame emission log-likelihoods ``log_emis`` (T x K),
a row-stochastic transition matrix ``trans`` (K x K, probabilities) and an
initial log distribution.  Filtered messages are kept in log space; the
transition step rescales by the running maximum before touching ``trans``,
so zero transition entries are allowed and nothing underflows.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _forward(log_init, trans, log_emis, keep):
    T, K = log_emis.shape
    out = np.empty((T if keep else 1, K))
    alpha = np.empty(K)
    tmp = np.empty(K)
    for j in range(K):
        alpha[j] = log_init[j] + log_emis[0, j]
    if keep:
        out[0] = alpha
    for t in range(1, T):
        m = -np.inf
        for i in range(K):
            if alpha[i] > m:
                m = alpha[i]
        if m == -np.inf:
            return out, -np.inf
        for i in range(K):
            tmp[i] = np.exp(alpha[i] - m)
        for j in range(K):
            s = 0.0
            for i in range(K):
                s += tmp[i] * trans[i, j]
            alpha[j] = (np.log(s) + m if s > 0.0 else -np.inf) + log_emis[t, j]
        if keep:
            out[t] = alpha
    m = -np.inf
    for i in range(K):
        if alpha[i] > m:
            m = alpha[i]
    if m == -np.inf:
        return out, -np.inf
    s = 0.0
    for i in range(K):
        s += np.exp(alpha[i] - m)
    return out, np.log(s) + m


@njit(cache=True)
def _draw(logp, u):
    K = logp.shape[0]
    m = -np.inf
    for i in range(K):
        if logp[i] > m:
            m = logp[i]
    total = 0.0
    w = np.empty(K)
    for i in range(K):
        w[i] = np.exp(logp[i] - m)
        total += w[i]
    target = u * total
    acc = 0.0
    for i in range(K):
        acc += w[i]
        if target < acc:
            return i
    # u * total rounded up to total; fall back to the last positive weight
    for i in range(K - 1, -1, -1):
        if w[i] > 0.0:
            return i
    return K - 1


@njit(cache=True)
def _backward_sample(log_alpha, trans, uniforms):
    T, K = log_alpha.shape
    z = np.empty(T, dtype=np.int64)
    z[T - 1] = _draw(log_alpha[T - 1], uniforms[T - 1])
    logp = np.empty(K)
    for t in range(T - 2, -1, -1):
        nxt = z[t + 1]
        for i in range(K):
            p = trans[i, nxt]
            logp[i] = log_alpha[t, i] + (np.log(p) if p > 0.0 else -np.inf)
        z[t] = _draw(logp, uniforms[t])
    return z


@njit(cache=True)
def _viterbi(log_init, log_trans, log_emis):
    T, K = log_emis.shape
    delta = np.empty(K)
    new = np.empty(K)
    back = np.zeros((T, K), dtype=np.int64)
    for j in range(K):
        delta[j] = log_init[j] + log_emis[0, j]
    for t in range(1, T):
        for j in range(K):
            best = -np.inf
            arg = 0
            for i in range(K):
                v = delta[i] + log_trans[i, j]
                if v > best:
                    best = v
                    arg = i
            new[j] = best + log_emis[t, j]
            back[t, j] = arg
        for j in range(K):
            delta[j] = new[j]
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for j in range(K):
        if delta[j] > best:
            best = delta[j]
            arg = j
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


def uniform_log_init(k):
    return np.full(k, -np.log(k))


def forward_loglik(log_init, trans, log_emis):
    """Marginal log-likelihood log p(y_1..T) with the state path summed out."""
    _, ll = _forward(np.ascontiguousarray(log_init, dtype=float),
                     np.ascontiguousarray(trans, dtype=float),
                     np.ascontiguousarray(log_emis, dtype=float), False)
    return float(ll)


def forward_filter(log_init, trans, log_emis):
    """Return (log alpha table T x K, log marginal likelihood)."""
    alpha, ll = _forward(np.ascontiguousarray(log_init, dtype=float),
                         np.ascontiguousarray(trans, dtype=float),
                         np.ascontiguousarray(log_emis, dtype=float), True)
    return alpha, float(ll)


def ffbs(log_init, trans, log_emis, rng):
    """One posterior path draw by forward filtering, backward sampling.

    Returns local state indices (columns of ``log_emis``).
    """
    alpha, ll = forward_filter(log_init, trans, log_emis)
    if not np.isfinite(ll):
        raise FloatingPointError("sequence has zero probability under the HMM")
    u = rng.random(log_emis.shape[0])
    return _backward_sample(alpha, np.ascontiguousarray(trans, dtype=float), u), ll


def viterbi(log_init, trans, log_emis):
    """Most likely path and its joint log probability."""
    with np.errstate(divide="ignore"):
        log_trans = np.log(np.asarray(trans, dtype=float))
    path, best = _viterbi(np.ascontiguousarray(log_init, dtype=float),
                          np.ascontiguousarray(log_trans),
                          np.ascontiguousarray(log_emis, dtype=float))
    return path, float(best)
