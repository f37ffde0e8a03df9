"""Vector-autoregressive emission states and their conjugate MNIW prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

from ..errors import NumericDomainError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ARState:
    """One shared behavior: y_t = A @ [y_{t-1}; ...; y_{t-r}] + e,  e ~ N(0, Sigma)."""

    index: int
    A: np.ndarray  # D x (D * r)
    Sigma: np.ndarray  # D x D

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if self.A.size == 0:
            self.A = self.A.reshape(self.Sigma.shape[0], 0)

    @property
    def D(self):
        return self.Sigma.shape[0]

    @property
    def lag(self):
        return self.A.shape[1] // self.D if self.D else 0


def _chol(Sigma):
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise NumericDomainError("covariance must be square")
    if not np.all(np.isfinite(Sigma)) or not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12):
        raise NumericDomainError("covariance must be finite and symmetric")
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise NumericDomainError("covariance is not positive definite") from None


def lagged(values, lag):
    """Split a T x D series into targets (T-r x D) and stacked lag regressors (T-r x D*r).

    Regressor row for target t is [y_{t-1}, y_{t-2}, ..., y_{t-r}].
    """
    values = np.asarray(values, dtype=float)
    T, D = values.shape
    targets = values[lag:]
    X = np.empty((T - lag, D * lag))
    for j in range(1, lag + 1):
        X[:, (j - 1) * D:j * D] = values[lag - j:T - j]
    return targets, X


def ar_loglik(state: ARState, y_t, history) -> float:
    """log N(y_t; A vec(history), Sigma); ``history[0]`` is the most recent frame."""
    y_t = np.atleast_1d(np.asarray(y_t, dtype=float))
    history = np.asarray(history, dtype=float).reshape(-1, y_t.shape[0])
    if history.shape[0] != state.lag:
        raise ValidationError(f"history has {history.shape[0]} frames, lag is {state.lag}")
    return float(emission_loglik(state, y_t[None, :], history.reshape(1, -1))[0])


def emission_loglik(state: ARState, targets, X, check=True) -> np.ndarray:
    """Per-frame Gaussian log density of ``targets`` given lag regressors ``X``."""
    L = _chol(state.Sigma) if check else np.linalg.cholesky(state.Sigma)
    resid = targets - X @ state.A.T if X.shape[1] else targets
    u = solve_triangular(L, resid.T, lower=True, check_finite=False) if resid.shape[0] else resid.T
    D = L.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (D * LOG_2PI + logdet + np.sum(u * u, axis=0))


def emission_matrix(states, targets, X, check=True) -> np.ndarray:
    """T-r x K table of emission log-likelihoods, one column per state."""
    out = np.empty((targets.shape[0], len(states)))
    for k, st in enumerate(states):
        out[:, k] = emission_loglik(st, targets, X, check)
    return out


@dataclass
class MNIW:
    """Matrix-normal inverse-Wishart: Sigma ~ IW(dof, S), A | Sigma ~ MN(M, Sigma, V).

    ``V`` is the column covariance of A (over the D*r regressors).
    """

    M: np.ndarray
    V: np.ndarray
    S: np.ndarray
    dof: float

    @classmethod
    def default(cls, D, lag, dof=None):
        m = D * lag
        return cls(np.zeros((D, m)), np.eye(m), np.eye(D), float(D + 2 if dof is None else dof))

    def __post_init__(self):
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        D = self.S.shape[0]
        self.M = np.asarray(self.M, dtype=float).reshape(D, -1)
        m = self.M.shape[1]
        self.V = np.asarray(self.V, dtype=float).reshape(m, m)
        if self.dof <= D - 1:
            raise ValidationError(f"inverse-Wishart dof must exceed D - 1 = {D - 1}")

    def posterior(self, targets, X) -> "MNIW":
        """Conjugate update from n observations (rows of ``targets`` / ``X``)."""
        return self.posterior_from_stats(targets.shape[0], X.T @ X, targets.T @ X,
                                         targets.T @ targets)

    def posterior_from_stats(self, n, Sxx, Syx, Syy) -> "MNIW":
        """Update from sufficient statistics X'X, Y'X, Y'Y of n frames."""
        if n == 0:
            return self
        if self.M.shape[1] == 0:
            return MNIW(self.M, self.V, self.S + Syy, self.dof + n)
        Vinv = np.linalg.inv(self.V)
        prec = Sxx + Vinv
        cross = Syx + self.M @ Vinv
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        M_post = cross @ cov
        S_post = self.S + Syy + self.M @ Vinv @ self.M.T - M_post @ cross.T
        S_post = 0.5 * (S_post + S_post.T)
        return MNIW(M_post, cov, S_post, self.dof + n)

    def sample(self, rng, index=0) -> ARState:
        D = self.S.shape[0]
        if D == 1:
            # scipy returns a scalar for 1x1 scale matrices
            Sigma = np.array([[float(stats.invwishart.rvs(df=self.dof, scale=self.S[0, 0],
                                                          random_state=rng))]])
        else:
            Sigma = np.asarray(stats.invwishart.rvs(df=self.dof, scale=self.S, random_state=rng))
        Sigma = 0.5 * (Sigma + Sigma.T)
        m = self.M.shape[1]
        if m:
            Z = rng.standard_normal((D, m))
            A = self.M + np.linalg.cholesky(Sigma) @ Z @ np.linalg.cholesky(self.V).T
        else:
            A = np.zeros((D, 0))
        return ARState(index, A, Sigma)


def sample_ar_params(targets, X, prior: MNIW, rng, index=0) -> ARState:
    """Posterior draw of one state's (A, Sigma) given the frames assigned to it.

    With no assigned frames this is a draw from ``prior``.
    """
    rng = np.random.default_rng(rng)
    targets = np.asarray(targets, dtype=float).reshape(-1, prior.S.shape[0])
    X = np.asarray(X, dtype=float).reshape(targets.shape[0], prior.M.shape[1])
    return prior.posterior(targets, X).sample(rng, index)


def companion_spectral_radius(A) -> float:
    """Spectral radius of the VAR companion matrix; < 1 means stationary."""
    A = np.atleast_2d(A)
    D, m = A.shape
    if m == 0:
        return 0.0
    lag = m // D
    C = np.zeros((m, m))
    C[:D] = A
    if lag > 1:
        C[D:, :-D] = np.eye(m - D)
    return float(np.max(np.abs(np.linalg.eigvals(C))))
