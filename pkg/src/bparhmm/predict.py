"""Construct prediction from representations with leave-one-out cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist
from sklearn.ensemble import RandomForestRegressor

from .data import Dataset, construct_vector, numeric_constructs, raw_summary_features
from .distance import distance_matrix
from .embedding import Representation, spectral_representation, stationary_representation
from .errors import UntestableError, ValidationError

log = logging.getLogger(__name__)

MODELS = ("ridge", "kernel_ridge", "random_forest")
K_GRID = tuple(range(10, 101, 10))
MAX_SETTINGS = 10


def default_grid(model, n_estimators=200):
    if model == "ridge":
        return [{"alpha": float(a)} for a in np.logspace(-3, 3, 7)]
    if model == "kernel_ridge":
        grid = [{"bandwidth_scale": s, "alpha": a}
                for s in (0.5, 1.0, 2.0) for a in (1e-2, 1.0, 1e2)]
        return grid[:MAX_SETTINGS]
    if model == "random_forest":
        return [{"max_depth": d, "n_estimators": n_estimators} for d in (3, 6, None)]
    raise ValidationError(f"unknown model {model!r}; choose from {MODELS}")


@dataclass
class PredictionReport:
    construct: str
    representation: str
    model: str
    params: dict
    rho: float
    rmse: float
    n: int
    dropped: list = field(default_factory=list)
    predictions: np.ndarray | None = field(default=None, repr=False)

    def to_json(self):
        return {"construct": self.construct, "representation": self.representation,
                "model": self.model, "params": self.params, "rho": self.rho,
                "rmse": self.rmse, "n": self.n, "dropped": list(self.dropped)}


def pearson(a, b) -> float:
    """Pearson correlation; 0 when either side is constant."""
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom <= 1e-300:
        return 0.0
    return float(np.clip(np.sum(a * b) / denom, -1.0, 1.0))


def rmse(pred, y) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(y)) ** 2)))


def _standardize(train, test):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def _fit_predict(model, params, Xtr, ytr, Xte, seed, standardize, fit_intercept):
    if standardize:
        Xtr, Xte = _standardize(Xtr, Xte)
    if model == "ridge":
        coef, b0 = ridge_fit(Xtr, ytr, params["alpha"], fit_intercept)
        return Xte @ coef + b0
    if model == "kernel_ridge":
        d = pdist(Xtr)
        med = float(np.median(d)) if d.size else 0.0
        bw = params["bandwidth_scale"] * (med if med > 0 else 1.0)
        offset = ytr.mean() if fit_intercept else 0.0
        gamma = 1.0 / (2 * bw * bw)
        Ktr = np.exp(-gamma * _sqdist(Xtr, Xtr))
        dual = np.linalg.solve(Ktr + params["alpha"] * np.eye(len(ytr)), ytr - offset)
        return np.exp(-gamma * _sqdist(Xte, Xtr)) @ dual + offset
    if model == "random_forest":
        est = RandomForestRegressor(n_estimators=params.get("n_estimators", 200),
                                    max_depth=params["max_depth"], random_state=seed)
        return est.fit(Xtr, ytr).predict(Xte)
    raise ValidationError(f"unknown model {model!r}")


def ridge_fit(X, y, alpha, fit_intercept=True):
    """Solve min ||y - X b - b0||^2 + alpha ||b||^2; returns (b, b0)."""
    if fit_intercept:
        mx, my = X.mean(axis=0), y.mean()
        Xc, yc = X - mx, y - my
    else:
        Xc, yc = X, y
    d = X.shape[1]
    coef = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(d), Xc.T @ yc)
    b0 = float(my - mx @ coef) if fit_intercept else 0.0
    return coef, b0


def _sqdist(A, B):
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2 * A @ B.T
    return np.maximum(d, 0.0)


def oof_predictions(X, y, model, params, seed=0, standardize=True, fit_intercept=True):
    """Out-of-fold prediction for every row, each from a fit on all other rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    out = np.empty(n)
    idx = np.arange(n)
    for i in range(n):
        tr = idx != i
        out[i] = _fit_predict(model, params, X[tr], y[tr], X[i:i + 1], seed,
                              standardize, fit_intercept)[0]
    return out


def loocv(X, y, model="ridge", grid=None, construct="", ids=None, seed=0,
          standardize=True, fit_intercept=True) -> PredictionReport:
    """Leave-one-out evaluation over a hyperparameter grid; the best setting is reported.

    Best means highest out-of-fold Pearson rho, ties broken by lower RMSE.  This
    selects on the same folds it reports, so the numbers are optimistic.
    """
    kind = "matrix"
    if isinstance(X, Representation):
        ids = X.ids if ids is None else ids
        kind = X.kind
        X = X.vectors
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError("X rows must align with y")
    ids = [str(i) for i in range(len(y))] if ids is None else list(ids)
    keep = np.isfinite(y)
    dropped = [ids[i] for i in np.flatnonzero(~keep)]
    if dropped:
        log.info("construct %s: dropping %d series without a score", construct, len(dropped))
    X, y = X[keep], y[keep]
    if y.size < 3:
        raise ValidationError("LOOCV needs at least three series with scores")
    if np.ptp(y) == 0:
        raise UntestableError(f"construct {construct!r} is constant")
    grid = default_grid(model) if grid is None else list(grid)
    if not grid or len(grid) > MAX_SETTINGS:
        raise ValidationError(f"grid must hold 1 to {MAX_SETTINGS} settings")
    best = None
    for params in grid:
        pred = oof_predictions(X, y, model, params, seed, standardize, fit_intercept)
        r, e = pearson(pred, y), rmse(pred, y)
        if best is None or r > best[0] or (r == best[0] and e < best[1]):
            best = (r, e, params, pred)
    r, e, params, pred = best
    return PredictionReport(construct, kind, model, dict(params), r, e, int(y.size), dropped, pred)


@dataclass
class StateAttribution:
    construct: str
    coefficients: np.ndarray  # one per global state
    ranking: list[int]  # state ids by decreasing |coefficient|


def attribute_states(fit_or_rep, y, construct="", alpha=1.0) -> StateAttribution:
    """Ridge on standardized stationary features using all series; coefficients ranked by size.

    A positive coefficient means more time in that state goes with a larger score.
    """
    rep = fit_or_rep if isinstance(fit_or_rep, Representation) else stationary_representation(fit_or_rep)
    X = rep.vectors
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y)
    X, y = X[keep], y[keep]
    if y.size < 3:
        raise ValidationError("need at least three scored series")
    if np.ptp(y) == 0:
        raise UntestableError(f"construct {construct!r} is constant")
    sd = X.std(axis=0)
    live = sd > 0
    Z = np.zeros_like(X)
    Z[:, live] = (X[:, live] - X[:, live].mean(axis=0)) / sd[live]
    coef = np.zeros(X.shape[1])
    coef[live] = ridge_fit(Z[:, live], y, alpha)[0]
    ranking = [int(k) for k in np.argsort(-np.abs(coef), kind="stable")]
    return StateAttribution(construct, coef, ranking)


@dataclass
class BenchmarkConfig:
    models: tuple = MODELS
    k_grid: tuple = K_GRID
    measures: tuple = ("likelihood", "viterbi")
    affinity: bool = False
    include_raw: bool = False
    n_estimators: int = 200
    eps: float = 1e-6
    seed: int = 0
    constructs: tuple | None = None  # default: every numeric column


REPRESENTATION_NAMES = {"stationary": "HMM-S", "likelihood": "HMM-SL", "viterbi": "HMM-SV"}


def _candidates(fit, dataset, config):
    """(name, list of (K or None, matrix)) for each representation family."""
    out = [("HMM-S", [(None, stationary_representation(fit).vectors)])]
    n = fit.N
    ks = [k for k in config.k_grid if k <= n] or [n]
    for measure in config.measures:
        dm = distance_matrix(fit, measure, eps=config.eps)
        reps = [(k, spectral_representation(dm, k, affinity=config.affinity).vectors) for k in ks]
        out.append((REPRESENTATION_NAMES[measure], reps))
    if config.include_raw:
        raw = raw_summary_features(dataset)
        out = [(name, [(k, np.hstack([m, raw])) for k, m in reps]) for name, reps in out]
    return out


def run_benchmark(fit, dataset: Dataset, config: BenchmarkConfig | None = None) -> list[PredictionReport]:
    """Best LOOCV report per (construct, representation family)."""
    config = BenchmarkConfig() if config is None else config
    if list(dataset.ids) != list(fit.ids):
        raise ValidationError("dataset and fit describe different series")
    names = list(config.constructs) if config.constructs is not None else numeric_constructs(dataset)
    if not names:
        return []
    families = _candidates(fit, dataset, config)
    reports = []
    for name in names:
        y = construct_vector(dataset, name, fit.ids)
        scored = y[np.isfinite(y)]
        if scored.size < 3 or np.ptp(scored) == 0:
            log.warning("construct %s has fewer than 3 scores or is constant; skipped", name)
            continue
        for family, reps in families:
            best = None
            for k, X in reps:
                for model in config.models:
                    grid = default_grid(model, config.n_estimators)
                    rep = loocv(X, y, model, grid, construct=name, ids=fit.ids, seed=config.seed)
                    if k is not None:
                        rep.params["K"] = k
                    if best is None or rep.rho > best.rho or (rep.rho == best.rho and rep.rmse < best.rmse):
                        best = rep
            best.representation = family
            reports.append(best)
    return reports


def report_table(reports) -> pd.DataFrame:
    """Construct x (representation, rho/RMSE) table."""
    rows = {}
    for r in reports:
        rows.setdefault(r.construct, {})[f"{r.representation}_rho"] = r.rho
        rows[r.construct][f"{r.representation}_rmse"] = r.rmse
    cols = [f"{fam}_{m}" for fam in ("HMM-S", "HMM-SL", "HMM-SV") for m in ("rho", "rmse")]
    table = pd.DataFrame.from_dict(rows, orient="index")
    table = table.reindex(columns=[c for c in cols if c in table.columns])
    table.index.name = "construct"
    return table
