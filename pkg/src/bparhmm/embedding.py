"""Per-series representations: stationary distributions and spectral embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateInputError, ValidationError

SMOOTHING = 1e-8


@dataclass
class Representation:
    ids: list[str]
    vectors: np.ndarray  # N x d
    kind: str  # stationary | spectral-likelihood | spectral-viterbi (+ "-affinity")
    K: int | None = None

    @property
    def d(self):
        return self.vectors.shape[1]


def _irreducible(P):
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    return n_comp == 1


def _power_iteration(P, tol=1e-12, max_iter=100_000):
    phi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        nxt = phi @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - phi)) < tol:
            return nxt
        phi = nxt
    return phi


def stationary_distribution(trans, smoothing=SMOOTHING, tol=1e-10) -> np.ndarray:
    """Probability vector phi with phi @ trans = phi.

    Irreducible chains are solved exactly as (trans^T - I) phi = 0 with the
    sum-to-one row appended.  Reducible chains (several closed classes, e.g.
    the identity) have no unique answer; they are first mixed with a tiny
    uniform jump ``(1 - smoothing) * trans + smoothing / K``.  Power iteration
    is the fallback when the solve misses ``tol``.
    """
    P = np.asarray(trans, dtype=float)
    K = P.shape[0]
    if P.ndim != 2 or P.shape[1] != K or K == 0:
        raise ValidationError("transition matrix must be square and nonempty")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-8):
        raise ValidationError("transition matrix must be row-stochastic")
    if K == 1:
        return np.ones(1)
    if not _irreducible(P):
        P = (1.0 - smoothing) * P + smoothing / K
    A = np.vstack([P.T - np.eye(K), np.ones((1, K))])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    phi, *_ = np.linalg.lstsq(A, b, rcond=None)
    phi = np.clip(phi, 0.0, None)
    phi /= phi.sum()
    if np.max(np.abs(phi @ P - phi)) >= tol:
        phi = _power_iteration(P)
    return phi


def stationary_representation(fit) -> Representation:
    """N x K matrix of per-series stationary distributions in global state columns."""
    out = np.zeros((fit.N, fit.K))
    for i, h in enumerate(fit.hmms):
        out[i, h.active] = stationary_distribution(h.trans)
    return Representation(list(fit.ids), out, "stationary", fit.K)


def normalized_laplacian(W) -> np.ndarray:
    """I - D^{-1/2} W D^{-1/2} with D the diagonal of row sums."""
    W = np.asarray(W, dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise DegenerateInputError(f"rows with zero sum: {np.flatnonzero(deg <= 0).tolist()}")
    s = 1.0 / np.sqrt(deg)
    L = np.eye(W.shape[0]) - s[:, None] * W * s[None, :]
    return 0.5 * (L + L.T)


def _fix_signs(V):
    # make the largest-magnitude entry of each column positive (first one on ties)
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def gaussian_affinity(values) -> np.ndarray:
    """exp(-d^2 / 2 sigma^2) with sigma the median off-diagonal distance; zero diagonal."""
    d = np.asarray(values, dtype=float)
    off = d[~np.eye(d.shape[0], dtype=bool)]
    sigma = np.median(off) if off.size else 1.0
    if sigma <= 0:
        sigma = 1.0
    W = np.exp(-(d ** 2) / (2 * sigma ** 2))
    np.fill_diagonal(W, 0.0)
    return W


def spectral_representation(dm, K, affinity=False) -> Representation:
    """Eigenvector embedding of a distance matrix.

    Default: the Laplacian is built on the distances themselves and the
    eigenvectors of the K largest eigenvalues are kept.  With ``affinity`` the
    usual spectral-clustering construction is used instead (Gaussian affinity,
    K smallest eigenvalues).  Columns follow eigenvalue order (descending for
    the default, ascending for the affinity variant).
    """
    n = len(dm.ids)
    if not 1 <= K <= n:
        raise ValidationError(f"K must be in [1, {n}], got {K}")
    W = gaussian_affinity(dm.values) if affinity else np.asarray(dm.values, dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        bad = [dm.ids[i] for i in np.flatnonzero(deg <= 0)]
        raise DegenerateInputError(f"zero row sum in distance matrix for series {bad}")
    L = normalized_laplacian(W)
    mu, V = np.linalg.eigh(L)
    if affinity:
        V = V[:, :K]
    else:
        V = V[:, ::-1][:, :K]
    kind = f"spectral-{dm.measure}" + ("-affinity" if affinity else "")
    return Representation(list(dm.ids), _fix_signs(V), kind, K)


def laplacian_spectrum(dm, affinity=False):
    """Eigenvalues and eigenvectors of the normalized Laplacian used by the embedding."""
    W = gaussian_affinity(dm.values) if affinity else np.asarray(dm.values, dtype=float)
    L = normalized_laplacian(W)
    mu, V = np.linalg.eigh(L)
    return L, mu, V
