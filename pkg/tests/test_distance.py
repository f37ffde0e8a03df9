import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bparhmm.distance import (
    DistanceMatrix, distance_matrix, embed_transitions, likelihood_distance, likelihood_similarity,
    sequence_score, viterbi_directed, viterbi_distance,
)
from bparhmm.errors import DegenerateInputError, ValidationError
from bparhmm.embedding import stationary_distribution
from bparhmm.model import SeriesHMM, StateSequence, relabel

from conftest import random_stochastic


def test_constant_sequence_score():
    seq = StateSequence("a", [2] * 11)
    other = SeriesHMM("b", [2], [[1.0]])
    assert sequence_score(seq, other, n_states=5) == pytest.approx(10 * math.log(5), abs=1e-12)


def test_three_transition_hand_value():
    P = np.array([[0.7, 0.3], [0.4, 0.6]])
    seq = StateSequence("a", [0, 0, 1, 0])
    hand = math.log(0.7) + math.log(0.3) + math.log(0.4) + 3 * math.log(2)
    assert abs(sequence_score(seq, SeriesHMM("b", [0, 1], P), 2) - hand) < 1e-12


def test_missing_state_uses_floor():
    seq = StateSequence("a", [0, 1])
    other = SeriesHMM("b", [0], [[1.0]])
    eps = 1e-6
    hand = math.log(eps / (1 + eps)) + math.log(2)
    assert sequence_score(seq, other, 2, eps) == pytest.approx(hand, abs=1e-12)


def test_likelihood_distance_hand():
    Pa = np.array([[0.8, 0.2], [0.3, 0.7]])
    Pb = np.array([[0.5, 0.5], [0.1, 0.9]])
    a = (SeriesHMM("a", [0, 1], Pa), StateSequence("a", [0, 0, 1, 1, 0]))
    b = (SeriesHMM("b", [0, 1], Pb), StateSequence("b", [1, 1, 1, 0, 0]))
    s_ab = math.log(0.5 * 0.5 * 0.9 * 0.1) + 4 * math.log(2)  # a's path under b
    s_ba = math.log(0.7 * 0.7 * 0.3 * 0.8) + 4 * math.log(2)  # b's path under a
    assert likelihood_similarity(a, b, 2) == pytest.approx(0.5 * (s_ab + s_ba), abs=1e-12)
    assert likelihood_distance(a, b, 2) == likelihood_distance(b, a, 2)


def test_viterbi_hand_case():
    lam = SeriesHMM("a", [0, 1], [[0.9, 0.1], [0.5, 0.5]])
    uni = SeriesHMM("b", [0, 1], [[0.5, 0.5], [0.5, 0.5]])
    hand = 5 / 6 * (0.9 * math.log(0.5 / 0.9) + 0.1 * math.log(0.5 / 0.1))
    assert abs(hand - (-0.3067)) < 1e-4
    assert abs(viterbi_directed(lam, uni) - hand) < 1e-10
    assert viterbi_distance(lam, uni) == viterbi_distance(uni, lam)


def test_viterbi_self_distance_is_exactly_zero(rng):
    for _ in range(100):
        k = int(rng.integers(1, 7))
        h = SeriesHMM("a", sorted(rng.choice(10, k, replace=False).tolist()),
                      random_stochastic(rng, k, sparsity=0.3))
        assert viterbi_directed(h, h) == 0.0
        assert viterbi_distance(h, h) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_viterbi_directed_nonpositive(ka, kb, seed):
    rng = np.random.default_rng(seed)
    a = SeriesHMM("a", sorted(rng.choice(6, ka, replace=False).tolist()), random_stochastic(rng, ka, 0.3))
    b = SeriesHMM("b", sorted(rng.choice(6, kb, replace=False).tolist()), random_stochastic(rng, kb, 0.3))
    assert viterbi_directed(a, b) <= 1e-12
    assert viterbi_distance(a, b) >= 0


def test_embed_unchanged_when_above_floor():
    P = np.array([[0.6, 0.4], [0.2, 0.8]])
    out = embed_transitions(SeriesHMM("a", [1, 3], P), [1, 3])
    assert np.array_equal(out, P)


def test_smoothing_continuity():
    P = np.array([[0.999999999, 1e-9], [0.5, 0.5]])
    Q = np.array([[0.9, 0.1], [0.2, 0.8]])
    a, b = SeriesHMM("a", [0, 1], P), SeriesHMM("b", [0, 1], Q)
    phi = stationary_distribution(P)
    exact = float(np.sum(phi[:, None] * P * (np.log(Q) - np.log(P))))
    errs = [abs(viterbi_directed(a, b, eps) - exact) for eps in (1e-6, 1e-9, 1e-12)]
    assert errs[0] > errs[2] and errs[2] < 1e-9


def test_sequence_score_relabel_invariant(rng):
    P = random_stochastic(rng, 3)
    z = rng.integers(0, 3, 40)
    perm = np.array([2, 0, 1, 3])
    a = sequence_score(StateSequence("a", np.array([0, 1, 3])[z]), SeriesHMM("b", [0, 1, 3], P), 4)
    order = np.argsort(perm[[0, 1, 3]])
    b = sequence_score(StateSequence("a", perm[np.array([0, 1, 3])[z]]),
                       SeriesHMM("b", sorted(perm[[0, 1, 3]].tolist()), P[np.ix_(order, order)]), 4)
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("measure", ["likelihood", "viterbi"])
def test_matrix_invariants(two_group, measure):
    _, _, f = two_group
    dm = distance_matrix(f, measure)
    v = dm.values
    assert np.max(np.abs(v - v.T)) <= 1e-10 and np.all(np.diag(v) == 0)
    assert np.all(np.isfinite(v)) and v.min() >= 0
    if measure == "likelihood":
        assert v.min() == 0.0  # shifted by the global minimum


@pytest.mark.parametrize("measure", ["likelihood", "viterbi"])
def test_two_groups_separate(two_group, measure):
    _, truth, f = two_group
    v = distance_matrix(f, measure).values
    g = np.array([0 if k[0] else 1 for k in truth.F])
    same = g[:, None] == g[None, :]
    off = ~np.eye(f.N, dtype=bool)
    assert v[same & off].mean() < v[~same].mean()


def test_matrix_relabel_invariant(two_group):
    _, _, f = two_group
    g = relabel(f, np.arange(f.K)[::-1])
    for m in ("likelihood", "viterbi"):
        np.testing.assert_allclose(distance_matrix(f, m).values, distance_matrix(g, m).values, atol=1e-10)


def test_identical_series_give_zero_matrix(two_group):
    _, _, f = two_group
    g = f.copy()
    for i in range(g.N):
        g.hmms[i] = SeriesHMM(g.ids[i], f.hmms[0].active, f.hmms[0].trans)
        g.sequences[i] = StateSequence(g.ids[i], f.sequences[0].z)
        g.F.F[i] = f.F.F[0]
    for m in ("likelihood", "viterbi"):
        assert np.all(distance_matrix(g, m).values == 0)


def test_two_series_and_degenerate(two_group):
    _, _, f = two_group
    g = f.copy()
    for attr in ("ids", "hmms", "sequences"):
        setattr(g, attr, getattr(g, attr)[:2])
    g.F.F = g.F.F[:2]
    dm = distance_matrix(g, "likelihood")
    assert dm.values.shape == (2, 2) and dm.values[0, 1] == dm.values[1, 0]
    for attr in ("ids", "hmms", "sequences"):
        setattr(g, attr, getattr(g, attr)[:1])
    with pytest.raises(DegenerateInputError):
        distance_matrix(g, "viterbi")


def test_unknown_measure(two_group):
    with pytest.raises(ValidationError):
        distance_matrix(two_group[2], "edit")


def test_per_hmm_normalizer(two_group):
    _, _, f = two_group
    dm = distance_matrix(f, "likelihood", k_mode="per-hmm")
    dm.validate()


def test_validate_rejects_bad_matrix():
    with pytest.raises(ValidationError):
        DistanceMatrix(["a", "b"], np.array([[0.0, 1.0], [2.0, 0.0]]), "viterbi").validate()
    with pytest.raises(ValidationError):
        DistanceMatrix(["a", "b"], np.array([[0.0, -1.0], [-1.0, 0.0]]), "viterbi").validate()
