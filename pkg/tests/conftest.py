import numpy as np
import pytest

from bparhmm.data import normalize_dataset
from bparhmm.model import Hyperparams, fit, prune_rare_states
from bparhmm.synth import generate, two_group_spec


@pytest.fixture(scope="session")
def two_group():
    """Small planted two-group problem, fitted and pruned once per session."""
    spec = two_group_spec(6, length=200, seed=11)
    raw, truth = generate(spec)
    data = normalize_dataset(raw)
    f = fit(data, Hyperparams(sweeps=150, burn_in=50, seed=5))
    return data, truth, prune_rare_states(f, data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stochastic(rng, k, sparsity=0.0):
    P = rng.random((k, k)) ** 3
    if sparsity:
        P[rng.random((k, k)) < sparsity] = 0.0
        P[np.arange(k), rng.integers(k, size=k)] += 0.1
    return P / P.sum(axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
