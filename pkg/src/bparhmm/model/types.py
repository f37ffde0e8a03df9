from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .ar import MNIW, ARState


@dataclass
class FeatureMatrix:
    """N x K binary assignment of shared states to series."""

    F: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=bool)
        if self.F.ndim != 2:
            raise ValidationError("feature matrix must be two-dimensional")

    @property
    def counts(self) -> np.ndarray:
        return self.F.sum(axis=0).astype(int)

    @property
    def shape(self):
        return self.F.shape

    def validate(self, allow_empty_rows=False):
        if not allow_empty_rows and not self.F.any(axis=1).all():
            raise ValidationError("feature matrix has a series with no active state")
        if self.F.shape[1] and not self.F.any(axis=0).all():
            raise ValidationError("feature matrix has an unused column")


@dataclass
class SeriesHMM:
    """Per-series HMM over the series' active global states.

    ``trans[a, b]`` is the probability of moving from ``active[a]`` to ``active[b]``.
    """

    id: str
    active: list[int]
    trans: np.ndarray

    def __post_init__(self):
        self.active = [int(k) for k in self.active]
        self.trans = np.asarray(self.trans, dtype=float).reshape(len(self.active), len(self.active))

    def validate(self, tol=1e-12):
        if not self.active:
            raise ValidationError(f"series {self.id!r}: empty active set")
        if np.any(self.trans < 0) or not np.allclose(self.trans.sum(axis=1), 1.0, rtol=0, atol=tol):
            raise ValidationError(f"series {self.id!r}: transition matrix not row-stochastic")


@dataclass
class StateSequence:
    """Decoded global state ids for frames r..T-1 of one series."""

    id: str
    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)


@dataclass
class Hyperparams:
    alpha: float = 2.0
    lag: int = 1
    kappa: float = 10.0
    gamma: float = 1.0
    # MNIW prior; None means the defaults M=0, V=I, S0=I, n0=D+2
    prior_M: np.ndarray | None = None
    prior_V: np.ndarray | None = None
    prior_S: np.ndarray | None = None
    prior_dof: float | None = None
    sweeps: int = 1000
    burn_in: int = 500
    seed: int = 0
    birth_death_moves: int = 1

    def validate(self, D=None):
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.lag < 0 or int(self.lag) != self.lag:
            raise ValidationError("lag must be a nonnegative integer")
        if self.kappa < 0:
            raise ValidationError("kappa must be nonnegative")
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if self.sweeps < 0 or self.burn_in < 0:
            raise ValidationError("sweeps and burn_in must be nonnegative")
        if D is not None and self.prior_dof is not None and self.prior_dof <= D - 1:
            raise ValidationError(f"prior dof must exceed D - 1 = {D - 1}")

    def prior(self, D) -> MNIW:
        m = D * self.lag
        return MNIW(
            np.zeros((D, m)) if self.prior_M is None else self.prior_M,
            np.eye(m) if self.prior_V is None else self.prior_V,
            np.eye(D) if self.prior_S is None else self.prior_S,
            float(D + 2 if self.prior_dof is None else self.prior_dof),
        )


@dataclass
class ModelFit:
    ids: list[str]
    states: list[ARState]
    F: FeatureMatrix
    hmms: list[SeriesHMM]
    sequences: list[StateSequence]
    hyper: Hyperparams
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.states)

    @property
    def N(self) -> int:
        return len(self.ids)

    def copy(self) -> "ModelFit":
        return copy.deepcopy(self)

    def validate(self, tol=1e-12):
        K = self.K
        if self.F.shape != (self.N, K):
            raise ValidationError(f"feature matrix shape {self.F.shape} != ({self.N}, {K})")
        self.F.validate()
        for k, st in enumerate(self.states):
            if st.index != k:
                raise ValidationError("state indices must be 0..K-1 in order")
            if np.min(np.linalg.eigvalsh(st.Sigma)) <= 0:
                raise ValidationError(f"state {k}: Sigma not positive definite")
        for i, (h, s) in enumerate(zip(self.hmms, self.sequences)):
            h.validate(tol)
            if sorted(h.active) != h.active or list(np.flatnonzero(self.F.F[i])) != h.active:
                raise ValidationError(f"series {h.id!r}: active set disagrees with F")
            if s.z.size and not np.isin(s.z, h.active).all():
                raise ValidationError(f"series {h.id!r}: sequence leaves its active set")
        return self
