"""Distances between fitted per-series HMMs.

Two measures:

* likelihood: cross-likelihood of each series' decoded state path under the
  other series' transition matrix, length-normalized against a uniform K-state
  chain and averaged over both directions;
* viterbi: stationary-weighted log-ratio divergence between two transition
  matrices, averaged over both directions.

Both compare HMMs over global state ids.  A state missing from one HMM gets
transition probability floored at ``eps`` (rows renormalized).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding import stationary_distribution
from .errors import DegenerateInputError, ValidationError

EPS = 1e-6
MEASURES = ("likelihood", "viterbi")


@dataclass
class DistanceMatrix:
    ids: list[str]
    values: np.ndarray
    measure: str

    def validate(self, tol=1e-10):
        v = self.values
        n = len(self.ids)
        if v.shape != (n, n):
            raise ValidationError(f"distance matrix is {v.shape}, expected ({n}, {n})")
        if not np.all(np.isfinite(v)):
            raise ValidationError("distance matrix has non-finite entries")
        if np.max(np.abs(v - v.T), initial=0.0) > tol:
            raise ValidationError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0):
            raise ValidationError("distance matrix diagonal must be zero")
        if np.any(v < 0):
            raise ValidationError("distance matrix has negative entries")
        return self


def embed_transitions(hmm, states, eps=EPS) -> np.ndarray:
    """``hmm.trans`` laid out over the ordered global ``states``, floored and renormalized.

    Rows of states the HMM lacks become uniform; entries below ``eps`` are
    raised to ``eps``.  Matrices with every entry >= eps come back unchanged.
    """
    pos = {k: a for a, k in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    idx = [pos[k] for k in hmm.active]
    P[np.ix_(idx, idx)] = hmm.trans
    if np.all(P >= eps):
        return P
    P = np.maximum(P, eps)
    return P / P.sum(axis=1, keepdims=True)


def sequence_score(seq, other, n_states, eps=EPS) -> float:
    """log p_other(seq) - L log(1/K): transition log-likelihood of ``seq`` under ``other``.

    Only transitions are scored (no initial-state term); L = len(seq) - 1.
    """
    z = np.asarray(seq.z, dtype=np.int64)
    L = z.size - 1
    if L <= 0:
        return 0.0
    states = sorted(set(other.active) | set(np.unique(z).tolist()))
    P = embed_transitions(other, states, eps)
    remap = np.full(max(states) + 1, -1, dtype=np.int64)
    remap[states] = np.arange(len(states))
    local = remap[z]
    return float(np.log(P[local[:-1], local[1:]]).sum() + L * math.log(n_states))


def likelihood_similarity(a, b, n_states, eps=EPS) -> float:
    """Average of the two cross scores for ``a = (hmm, seq)`` and ``b = (hmm, seq)``."""
    (hmm_a, seq_a), (hmm_b, seq_b) = a, b
    return 0.5 * (sequence_score(seq_a, hmm_b, n_states, eps)
                  + sequence_score(seq_b, hmm_a, n_states, eps))


def likelihood_distance(a, b, n_states, eps=EPS) -> float:
    """Negated similarity; :func:`distance_matrix` shifts the whole matrix to be nonnegative."""
    return -likelihood_similarity(a, b, n_states, eps)


def viterbi_directed(hmm, other, eps=EPS) -> float:
    """sum_ij a_ij phi(i) (log a'_ij - log a_ij), with phi the stationary law of ``hmm``.

    Never positive (Gibbs' inequality row by row); zero when the HMMs agree.
    """
    states = sorted(set(hmm.active) | set(other.active))
    a = embed_transitions(hmm, states, eps)
    b = embed_transitions(other, states, eps)
    phi = stationary_distribution(a)
    return float(np.sum(phi[:, None] * a * (np.log(b) - np.log(a))))


def viterbi_distance(hmm, other, eps=EPS) -> float:
    """Symmetrized, sign-flipped Viterbi divergence (>= 0)."""
    d = -0.5 * (viterbi_directed(hmm, other, eps) + viterbi_directed(other, hmm, eps))
    return max(d, 0.0)


def distance_matrix(fit, measure="likelihood", eps=EPS, k_mode="global") -> DistanceMatrix:
    """All pairwise distances between the series of ``fit``.

    ``k_mode`` picks the K of the likelihood normalizer: the global state count
    (default) or the active-state count of the HMM doing the scoring.
    """
    if measure not in MEASURES:
        raise ValidationError(f"unknown measure {measure!r}; choose from {MEASURES}")
    if k_mode not in ("global", "per-hmm"):
        raise ValidationError("k_mode must be 'global' or 'per-hmm'")
    n = fit.N
    if n < 2:
        raise DegenerateInputError("need at least two series for a distance matrix")
    hmms, seqs = fit.hmms, fit.sequences
    if measure == "likelihood":
        S = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                K = fit.K if k_mode == "global" else len(hmms[j].active)
                S[i, j] = sequence_score(seqs[i], hmms[j], K, eps)
        D = -0.5 * (S + S.T)
        D -= D.min()
    else:
        dirs = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    dirs[i, j] = viterbi_directed(hmms[i], hmms[j], eps)
        if dirs.max() > 1e-12:
            raise ArithmeticError("directed Viterbi divergence came out positive")
        D = np.maximum(-0.5 * (dirs + dirs.T), 0.0)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(list(fit.ids), D, measure).validate()
