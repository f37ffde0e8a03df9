import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bparhmm.model.hmm import ffbs, forward_filter, forward_loglik, uniform_log_init, viterbi


def _enumerate(log_init, trans, log_emis):
    """log p of every path, by brute force."""
    T, K = log_emis.shape
    paths = list(itertools.product(range(K), repeat=T))
    out = []
    for z in paths:
        lp = log_init[z[0]] + log_emis[0, z[0]]
        for t in range(1, T):
            lp += np.log(trans[z[t - 1], z[t]]) + log_emis[t, z[t]]
        out.append(lp)
    return paths, np.array(out)


def _toy(rng, T=8, K=2):
    trans = rng.dirichlet(np.ones(K), size=K)
    log_init = np.log(rng.dirichlet(np.ones(K)))
    log_emis = rng.normal(scale=2.0, size=(T, K))
    return log_init, trans, log_emis


def test_forward_matches_enumeration(rng):
    for _ in range(20):
        log_init, trans, log_emis = _toy(rng)
        _, lps = _enumerate(log_init, trans, log_emis)
        exact = np.logaddexp.reduce(lps)
        assert abs(forward_loglik(log_init, trans, log_emis) - exact) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_forward_enumeration_property(T, K, seed):
    log_init, trans, log_emis = _toy(np.random.default_rng(seed), T, K)
    _, lps = _enumerate(log_init, trans, log_emis)
    assert forward_loglik(log_init, trans, log_emis) == pytest.approx(np.logaddexp.reduce(lps), abs=1e-10)


def test_forward_handles_huge_magnitudes():
    log_emis = np.full((2000, 2), -800.0)
    ll = forward_loglik(uniform_log_init(2), np.full((2, 2), 0.5), log_emis)
    assert ll == pytest.approx(-1.6e6)


def test_forward_filter_last_row_sums_to_marginal(rng):
    log_init, trans, log_emis = _toy(rng, T=5, K=3)
    alpha, ll = forward_filter(log_init, trans, log_emis)
    assert alpha.shape == (5, 3)
    assert ll == pytest.approx(forward_loglik(log_init, trans, log_emis))


def test_viterbi_matches_enumeration(rng):
    for _ in range(20):
        log_init, trans, log_emis = _toy(rng, T=6, K=3)
        paths, lps = _enumerate(log_init, trans, log_emis)
        path, best = viterbi(log_init, trans, log_emis)
        assert best == pytest.approx(lps.max(), abs=1e-10)
        assert tuple(path) == paths[int(np.argmax(lps))]


def test_ffbs_single_state(rng):
    z, _ = ffbs(np.zeros(1), np.ones((1, 1)), rng.normal(size=(50, 1)), rng)
    assert np.all(z == 0)


def test_ffbs_draws_from_exact_posterior(rng):
    log_init, trans, log_emis = _toy(rng, T=3, K=2)
    paths, lps = _enumerate(log_init, trans, log_emis)
    post = np.exp(lps - np.logaddexp.reduce(lps))
    n = 20000
    index = {p: i for i, p in enumerate(paths)}
    counts = np.zeros(len(paths))
    for _ in range(n):
        z, _ = ffbs(log_init, trans, log_emis, rng)
        counts[index[tuple(z)]] += 1
    se = np.sqrt(post * (1 - post) / n)
    assert np.all(np.abs(counts / n - post) < 4 * se + 1e-12)


def test_ffbs_symmetric_states(rng):
    T = 10_000
    z, _ = ffbs(uniform_log_init(2), np.full((2, 2), 0.5), np.zeros((T, 2)), rng)
    assert abs(z.mean() - 0.5) < 0.02


def test_ffbs_seeded():
    log_init, trans, log_emis = _toy(np.random.default_rng(0), T=100, K=3)
    a, _ = ffbs(log_init, trans, log_emis, np.random.default_rng(7))
    b, _ = ffbs(log_init, trans, log_emis, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_ffbs_zero_probability():
    with pytest.raises(FloatingPointError):
        ffbs(np.zeros(1), np.ones((1, 1)), np.full((3, 1), -np.inf), np.random.default_rng(0))
