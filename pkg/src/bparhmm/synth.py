"""Synthetic BP-AR-HMM datasets with known ground truth, and recovery scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from .data import ChannelSchema, Dataset, MultiSeries
from .embedding import stationary_distribution
from .errors import ValidationError
from .model.ar import ARState, companion_spectral_radius
from .model.types import FeatureMatrix, Hyperparams, ModelFit, SeriesHMM, StateSequence

# diagonal AR coefficient and equicorrelation of the noise for the built-in states
_DEFAULT_DYNAMICS = [(0.95, 0.0), (-0.6, 0.0), (0.0, 0.7), (0.6, -0.4)]


def default_states(n_states, dim, lag=1, rng=None):
    """Well-separated stable VAR states with unit marginal variance per channel.

    The first four are hand-picked (smooth drift, oscillation, correlated white
    noise, moderate persistence); any further ones are random stable VARs.
    """
    rng = np.random.default_rng(rng)
    states = []
    for k in range(n_states):
        if k < len(_DEFAULT_DYNAMICS):
            a, rho = _DEFAULT_DYNAMICS[k]
            if dim > 1:
                rho = max(rho, -0.9 / (dim - 1))
            corr = np.full((dim, dim), rho) + (1 - rho) * np.eye(dim)
            A = np.zeros((dim, dim * lag))
            A[:, :dim] = a * np.eye(dim)
            Sigma = (1 - a * a) * corr
        else:
            A = rng.normal(size=(dim, dim * lag))
            A *= 0.8 / max(companion_spectral_radius(A), 1e-12)
            W = rng.normal(size=(dim, dim + 2))
            Sigma = W @ W.T / (dim + 2) + 0.1 * np.eye(dim)
        states.append(ARState(k, A, Sigma))
    return states


@dataclass
class SynthSpec:
    n_series: int = 20
    n_states: int = 4
    dim: int = 3
    lag: int = 1
    length: int | tuple[int, int] = 500  # fixed, or inclusive (min, max)
    features: np.ndarray | None = None  # N x K_true; random when None
    feature_prob: float = 0.5
    states: list[ARState] | None = None
    concentration: float = 1.0
    self_bias: float = 30.0
    # name -> (weights over true states, noise std); value = w . stationary + noise
    constructs: dict = field(default_factory=dict)
    groups: list | None = None  # optional categorical label per series
    burn: int = 50
    seed: int = 0

    def validate(self):
        if self.n_series < 1 or self.n_states < 1 or self.dim < 1 or self.lag < 0:
            raise ValidationError("n_series, n_states, dim must be positive and lag nonnegative")
        if self.features is not None:
            F = np.asarray(self.features, dtype=bool)
            if F.shape != (self.n_series, self.n_states):
                raise ValidationError(f"features must be {self.n_series} x {self.n_states}")
            if not F.any(axis=1).all():
                raise ValidationError("every series needs at least one true state")
        if self.states is not None:
            if len(self.states) != self.n_states:
                raise ValidationError("need one ARState per true state")
            for st in self.states:
                if st.A.shape != (self.dim, self.dim * self.lag):
                    raise ValidationError(f"state {st.index}: A has shape {st.A.shape}")
                if companion_spectral_radius(st.A) >= 1:
                    raise ValidationError(f"state {st.index}: AR dynamics are not stable")
                if np.min(np.linalg.eigvalsh(st.Sigma)) <= 0:
                    raise ValidationError(f"state {st.index}: Sigma not positive definite")
        for name, (w, noise) in self.constructs.items():
            if len(w) != self.n_states or noise < 0:
                raise ValidationError(f"construct {name!r}: bad weights or noise")
        if self.groups is not None and len(self.groups) != self.n_series:
            raise ValidationError("groups needs one label per series")


@dataclass
class Truth:
    ids: list[str]
    lag: int
    states: list[ARState]
    F: np.ndarray
    trans: list[np.ndarray]  # over each series' active states
    z: list[np.ndarray]  # full-length global state ids
    stationary: np.ndarray  # N x K_true

    @property
    def K(self):
        return len(self.states)

    def as_fit(self, lag=None) -> ModelFit:
        """The generating configuration expressed as a ModelFit (for self-scoring)."""
        lag = self.lag if lag is None else lag
        hmms = [SeriesHMM(sid, np.flatnonzero(self.F[i]).tolist(), self.trans[i])
                for i, sid in enumerate(self.ids)]
        seqs = [StateSequence(sid, self.z[i][lag:]) for i, sid in enumerate(self.ids)]
        return ModelFit(list(self.ids), [ARState(k, s.A, s.Sigma) for k, s in enumerate(self.states)],
                        FeatureMatrix(self.F), hmms, seqs, Hyperparams(lag=lag), {})

    def to_json(self):
        return {
            "format": 1,
            "ids": self.ids,
            "lag": self.lag,
            "states": [{"A": s.A.tolist(), "Sigma": s.Sigma.tolist()} for s in self.states],
            "F": self.F.astype(int).tolist(),
            "trans": [t.tolist() for t in self.trans],
            "z": [z.tolist() for z in self.z],
            "stationary": self.stationary.tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        if doc.get("format") != 1:
            raise ValidationError("unsupported truth format")
        return cls(
            ids=list(doc["ids"]), lag=int(doc["lag"]),
            states=[ARState(k, s["A"], s["Sigma"]) for k, s in enumerate(doc["states"])],
            F=np.asarray(doc["F"], dtype=bool),
            trans=[np.asarray(t, dtype=float) for t in doc["trans"]],
            z=[np.asarray(z, dtype=np.int64) for z in doc["z"]],
            stationary=np.asarray(doc["stationary"], dtype=float),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def _draw_features(spec, rng):
    if spec.features is not None:
        return np.asarray(spec.features, dtype=bool)
    while True:
        F = rng.random((spec.n_series, spec.n_states)) < spec.feature_prob
        for i in np.flatnonzero(~F.any(axis=1)):
            F[i, rng.integers(spec.n_states)] = True
        if F.any(axis=0).all():
            return F


def _simulate(states, active, trans, T, lag, burn, rng):
    D = states[0].D
    total = T + burn
    z_local = np.empty(total, dtype=np.int64)
    z_local[0] = rng.integers(len(active))
    for t in range(1, total):
        z_local[t] = rng.choice(len(active), p=trans[z_local[t - 1]])
    z = np.asarray(active)[z_local]
    y = np.zeros((total, D))
    chols = {k: np.linalg.cholesky(states[k].Sigma) for k in set(z.tolist())}
    for t in range(total):
        st = states[z[t]]
        mean = np.zeros(D)
        for j in range(1, lag + 1):
            if t - j >= 0:
                mean += st.A[:, (j - 1) * D:j * D] @ y[t - j]
        y[t] = mean + chols[z[t]] @ rng.standard_normal(D)
    return y[burn:], z[burn:]


def generate(spec: SynthSpec):
    """Sample a dataset and its ground truth; fully determined by ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 1])
    states = spec.states or default_states(spec.n_states, spec.dim, spec.lag, rng)
    F = _draw_features(spec, rng)
    schema = ChannelSchema(tuple(f"ch{d}" for d in range(spec.dim)))
    width = len(str(spec.n_series - 1))
    ids = [f"s{i:0{width}d}" for i in range(spec.n_series)]
    series, trans_all, z_all = [], [], []
    stationary = np.zeros((spec.n_series, spec.n_states))
    for i in range(spec.n_series):
        srng = np.random.default_rng([spec.seed, 2, i])
        active = np.flatnonzero(F[i])
        k = active.size
        params = spec.concentration + spec.self_bias * np.eye(k)
        trans = np.vstack([srng.dirichlet(row) for row in params])
        trans /= trans.sum(axis=1, keepdims=True)
        if isinstance(spec.length, tuple):
            T = int(srng.integers(spec.length[0], spec.length[1] + 1))
        else:
            T = int(spec.length)
        y, z = _simulate(states, active, trans, T, spec.lag, spec.burn, srng)
        series.append(MultiSeries(ids[i], y, schema))
        trans_all.append(trans)
        z_all.append(z)
        stationary[i, active] = stationary_distribution(trans)
    table = {}
    crng = np.random.default_rng([spec.seed, 3])
    for name, (w, noise) in spec.constructs.items():
        table[name] = stationary @ np.asarray(w, dtype=float) + noise * crng.standard_normal(spec.n_series)
    if spec.groups is not None:
        table["group"] = [str(g) for g in spec.groups]
    constructs = pd.DataFrame(table, index=pd.Index(ids, name="id")) if table else None
    truth = Truth(ids, spec.lag, list(states), F, trans_all, z_all, stationary)
    return Dataset(series, constructs), truth


def two_group_spec(n_per_group=10, **kw) -> SynthSpec:
    """Two planted groups of series using disjoint state pairs {0, 1} and {2, 3}."""
    n = 2 * n_per_group
    F = np.zeros((n, 4), dtype=bool)
    F[:n_per_group, :2] = True
    F[n_per_group:, 2:] = True
    groups = ["a"] * n_per_group + ["b"] * n_per_group
    kw.setdefault("n_states", 4)
    return SynthSpec(n_series=n, features=F, groups=groups, **kw)


@dataclass
class Recovery:
    accuracy: float
    k_fit: int
    k_true: int
    feature_agreement: float
    matching: dict  # fit state -> true state

    @property
    def delta_k(self):
        return abs(self.k_fit - self.k_true)

    def to_json(self):
        return {"format": 1, "accuracy": self.accuracy, "k_fit": self.k_fit, "k_true": self.k_true,
                "delta_k": self.delta_k, "feature_agreement": self.feature_agreement,
                "matching": {str(k): v for k, v in self.matching.items()}}


def score_recovery(fit: ModelFit, truth: Truth) -> Recovery:
    """Align fitted to true states by maximum-overlap bipartite matching and score.

    Accuracy is the fraction of frames whose fitted state maps to the true one;
    unmatched fitted states count as errors.
    """
    if list(fit.ids) != list(truth.ids):
        raise ValidationError("fit and truth describe different series")
    lag = fit.hyper.lag
    overlap = np.zeros((fit.K, truth.K))
    total = 0
    for seq, z_true in zip(fit.sequences, truth.z):
        zt = z_true[lag:]
        if zt.size != seq.z.size:
            raise ValidationError(f"series {seq.id!r}: sequence length mismatch")
        np.add.at(overlap, (seq.z, zt), 1)
        total += zt.size
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    matched = overlap[rows, cols].sum()
    matching = {int(r): int(c) for r, c in zip(rows, cols)}
    mapped = np.zeros_like(truth.F)
    for r, c in matching.items():
        mapped[:, c] = fit.F.F[:, r]
    agreement = float(np.mean(mapped == truth.F))
    return Recovery(float(matched / total) if total else 1.0, fit.K, truth.K, agreement, matching)
