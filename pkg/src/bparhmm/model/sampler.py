"""MCMC for the beta-process autoregressive HMM.

One sweep updates, in order:

1. features: Gibbs on shared states (marginal likelihood with the path summed
   out, weighted by IBP odds), then birth/death Metropolis-Hastings moves on
   series-unique states;
2. state sequences by forward filtering, backward sampling;
3. AR parameters from their MNIW posteriors;
4. per-series transition rows from Dirichlet posteriors with a sticky bonus.

Per-series transition matrices are represented, during the feature step, by
unnormalized gamma weights ``eta`` (pi restricted to an active set is eta
restricted and row-normalized).  ``eta`` is not stored: it is redrawn from
its conditional given the current ``pi`` whenever a series is visited.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..data import Dataset, MultiSeries
from ..errors import InsufficientDataError, ValidationError
from .ar import ARState, MNIW, emission_loglik, emission_matrix, lagged
from .hmm import ffbs, forward_loglik, uniform_log_init, viterbi
from .types import FeatureMatrix, Hyperparams, ModelFit, SeriesHMM, StateSequence

log = logging.getLogger(__name__)

_INIT_STREAM = 0xFFFF_FFFF
_FEATURES, _SEQUENCES, _AR, _TRANSITIONS = range(4)


def _row_normalize(P):
    P = np.asarray(P, dtype=float)
    s = P.sum(axis=1, keepdims=True)
    out = np.divide(P, s, out=np.full_like(P, 1.0 / max(P.shape[1], 1)), where=s > 0)
    return out


def _check_length(values, lag, sid):
    if values.shape[0] <= lag + 1:
        raise InsufficientDataError(
            f"series {sid!r} has {values.shape[0]} frames; lag {lag} needs at least {lag + 2}"
        )


def _is_normalized(series: MultiSeries, tol=1e-6):
    x = series.values
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    ok = (np.abs(mean) < tol) & ((np.abs(std - 1) < tol) | (std < tol))
    return bool(ok.all())


def sample_state_sequence(series: MultiSeries, hmm: SeriesHMM, states, rng, lag=None) -> StateSequence:
    """Posterior draw of the state path of ``series`` restricted to ``hmm.active``."""
    rng = np.random.default_rng(rng)
    if not hmm.active:
        raise ValidationError(f"series {hmm.id!r}: empty active set")
    by_id = {st.index: st for st in states}
    active_states = [by_id[k] for k in hmm.active]
    lag = active_states[0].lag if lag is None else lag
    _check_length(series.values, lag, series.id)
    targets, X = lagged(series.values, lag)
    E = emission_matrix(active_states, targets, X)
    local, _ = ffbs(uniform_log_init(len(hmm.active)), hmm.trans, E, rng)
    return StateSequence(series.id, np.asarray(hmm.active, dtype=np.int64)[local])


def transition_counts(z_local, k):
    counts = np.zeros((k, k))
    if len(z_local) > 1:
        np.add.at(counts, (z_local[:-1], z_local[1:]), 1.0)
    return counts


def sample_transitions(seq: StateSequence, active, gamma, kappa, rng) -> SeriesHMM:
    """Row j of pi ~ Dirichlet(gamma + kappa * e_j + transition counts out of j)."""
    rng = np.random.default_rng(rng)
    active = [int(k) for k in active]
    remap = np.full(max(active + [int(seq.z.max()) if seq.z.size else 0]) + 1, -1, dtype=np.int64)
    remap[active] = np.arange(len(active))
    local = remap[seq.z]
    if np.any(local < 0):
        bad = int(seq.z[np.argmax(local < 0)])
        raise ValidationError(f"series {seq.id!r}: state {bad} not in active set")
    k = len(active)
    params = gamma + kappa * np.eye(k) + transition_counts(local, k)
    trans = np.vstack([rng.dirichlet(row) for row in params]) if k else np.zeros((0, 0))
    return SeriesHMM(seq.id, active, _row_normalize(trans))


def birth_death_log_ratio(loglik_new, loglik_old, n_unique, alpha, N, move):
    """Log MH acceptance ratio for adding or removing one series-unique state.

    Unique states of a series are a Poisson(alpha / N) point process whose
    parameters come from the prior; proposing births from that prior cancels
    the parameter densities, leaving the likelihood ratio times the Poisson
    count ratio.  ``n_unique`` is the count before the move.
    """
    rate = alpha / N
    if move == "birth":
        return loglik_new - loglik_old + math.log(rate) - math.log(n_unique + 1)
    if move == "death":
        return loglik_new - loglik_old + math.log(n_unique) - math.log(rate)
    raise ValueError(f"unknown move {move!r}")


class _Chain:
    """Mutable working state of one MCMC chain."""

    def __init__(self, fit: ModelFit, dataset: Dataset):
        if [s.id for s in dataset.series] != list(fit.ids):
            raise ValidationError("dataset series do not match the fit's series ids")
        self.ids = list(fit.ids)
        self.hyper = fit.hyper
        self.N = len(self.ids)
        self.D = dataset.series[0].D
        self.prior = fit.hyper.prior(self.D)
        lag = fit.hyper.lag
        for s in dataset.series:
            _check_length(s.values, lag, s.id)
        self.designs = [lagged(s.values, lag) for s in dataset.series]
        self.Y_all = np.vstack([d[0] for d in self.designs])
        self.X_all = np.vstack([d[1] for d in self.designs])
        self.bounds = np.cumsum([0] + [d[0].shape[0] for d in self.designs])
        self.states = [ARState(k, st.A.copy(), st.Sigma.copy()) for k, st in enumerate(fit.states)]
        self.F = fit.F.F.copy()
        self.trans = [h.trans.copy() for h in fit.hmms]
        self.z = [s.z.copy() for s in fit.sequences]
        self.births = 0
        self.deaths = 0
        self.refresh_emissions()

    # bookkeeping -----------------------------------------------------------

    @property
    def K(self):
        return len(self.states)

    def active(self, i):
        return np.flatnonzero(self.F[i])

    def _split(self, table):
        return [table[a:b] for a, b in zip(self.bounds[:-1], self.bounds[1:])]

    def refresh_emissions(self):
        self.E = self._split(emission_matrix(self.states, self.Y_all, self.X_all, check=False))

    def compact(self):
        keep = np.flatnonzero(self.F.any(axis=0))
        if keep.size == self.K:
            return
        remap = np.full(self.K, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        self.states = [ARState(new, self.states[old].A, self.states[old].Sigma)
                       for new, old in enumerate(keep)]
        self.F = self.F[:, keep]
        self.E = [E[:, keep] for E in self.E]
        self.z = [remap[z] for z in self.z]

    def local_z(self, i):
        remap = np.full(self.K, -1, dtype=np.int64)
        act = self.active(i)
        remap[act] = np.arange(act.size)
        return remap[self.z[i]]

    def to_fit(self, diagnostics) -> ModelFit:
        hmms = [SeriesHMM(sid, self.active(i).tolist(), self.trans[i])
                for i, sid in enumerate(self.ids)]
        seqs = [StateSequence(sid, self.z[i].copy()) for i, sid in enumerate(self.ids)]
        states = [ARState(k, st.A.copy(), st.Sigma.copy()) for k, st in enumerate(self.states)]
        return ModelFit(self.ids, states, FeatureMatrix(self.F.copy()), hmms, seqs,
                        self.hyper, diagnostics)

    def loglik(self):
        """Complete-data log p(y, z | theta, pi) summed over series."""
        total = 0.0
        for i in range(self.N):
            z = self.local_z(i)
            act = self.active(i)
            E = self.E[i][:, act]
            total += E[np.arange(z.size), z].sum() - math.log(act.size)
            if z.size > 1:
                with np.errstate(divide="ignore"):
                    total += np.log(self.trans[i][z[:-1], z[1:]]).sum()
        return float(total)

    # feature step ------------------------------------------------------------

    def _eta(self, i, rng):
        g, kap = self.hyper.gamma, self.hyper.kappa
        K = self.K
        eta = rng.standard_gamma(g + kap * np.eye(K))
        act = self.active(i)
        shape = act.size * g + kap
        for a, j in enumerate(act):
            eta[j, act] = rng.standard_gamma(shape) * self.trans[i][a]
        return eta

    @staticmethod
    def _marginal(E, eta, mask):
        idx = np.flatnonzero(mask)
        P = _row_normalize(eta[np.ix_(idx, idx)])
        return forward_loglik(uniform_log_init(idx.size), P, E[:, idx])

    def resample_series_features(self, i, rng):
        hyper = self.hyper
        N = self.N
        eta = self._eta(i, rng)
        E = self.E[i]
        mask = self.F[i].copy()
        before = mask.copy()
        current = self._marginal(E, eta, mask)
        others = self.F.sum(axis=0) - self.F[i]

        for k in range(self.K):
            m = others[k]
            if m == 0:
                continue
            if mask[k] and mask.sum() == 1:
                continue  # never empty a row
            alt = mask.copy()
            alt[k] = not alt[k]
            alt_ll = self._marginal(E, eta, alt)
            on_ll, off_ll = (current, alt_ll) if mask[k] else (alt_ll, current)
            log_on = on_ll + math.log(m)
            log_off = off_ll + math.log(N - m)
            p_on = 1.0 / (1.0 + math.exp(min(log_off - log_on, 700.0)))
            new_val = rng.random() < p_on
            if new_val != mask[k]:
                mask = alt
                current = alt_ll

        new_state = None
        for _ in range(hyper.birth_death_moves):
            unique = [k for k in np.flatnonzero(mask) if k < self.K and others[k] == 0]
            if new_state is not None and mask[-1]:
                unique.append(mask.size - 1)
            n = len(unique)
            if rng.random() < 0.5:
                if new_state is not None:
                    continue  # at most one birth per visit keeps the bookkeeping simple
                cand = self.prior.sample(rng, index=self.K)
                col = emission_loglik(cand, *self.designs[i], check=False)
                E_b = np.column_stack([E, col])
                eta_b = np.empty((self.K + 1, self.K + 1))
                eta_b[:-1, :-1] = eta
                eta_b[-1, :] = rng.standard_gamma(hyper.gamma, self.K + 1)
                eta_b[:-1, -1] = rng.standard_gamma(hyper.gamma, self.K)
                eta_b[-1, -1] += rng.standard_gamma(hyper.kappa) if hyper.kappa > 0 else 0.0
                mask_b = np.append(mask, True)
                ll_b = self._marginal(E_b, eta_b, mask_b)
                ratio = birth_death_log_ratio(ll_b, current, n, hyper.alpha, N, "birth")
                if math.log(rng.random()) < ratio:
                    new_state, E, eta, mask, current = cand, E_b, eta_b, mask_b, ll_b
            else:
                if n == 0 or mask.sum() == 1:
                    continue
                k = unique[int(rng.integers(n))]
                alt = mask.copy()
                alt[k] = False
                alt_ll = self._marginal(E, eta, alt)
                ratio = birth_death_log_ratio(alt_ll, current, n, hyper.alpha, N, "death")
                if math.log(rng.random()) < ratio:
                    mask, current = alt, alt_ll
                    if new_state is not None and k == mask.size - 1:
                        new_state = None
                        mask = mask[:-1]
                        E = E[:, :-1]
                        eta = eta[:-1, :-1]
                    else:
                        self.deaths += 1

        if new_state is not None:
            self.births += 1
            self.states.append(new_state)
            self.F = np.column_stack([self.F, np.zeros(N, dtype=bool)])
            col = self._split(emission_loglik(new_state, self.Y_all, self.X_all, check=False))
            for j in range(N):
                if j != i:
                    self.E[j] = np.column_stack([self.E[j], col[j]])
            self.E[i] = E
        self.F[i] = mask
        idx = np.flatnonzero(mask)
        self.trans[i] = _row_normalize(eta[np.ix_(idx, idx)])
        changed = before.size != mask.size or not np.array_equal(before, mask)
        return changed

    def feature_step(self, rng):
        changed = []
        for i in range(self.N):
            if self.resample_series_features(i, rng):
                changed.append(i)
        for i in changed:
            # keep z inside the new active set before compaction
            self.sample_sequence(i, rng)
        self.compact()
        return changed

    # remaining Gibbs stages ----------------------------------------------------

    def sample_sequence(self, i, rng):
        act = self.active(i)
        local, _ = ffbs(uniform_log_init(act.size), self.trans[i], self.E[i][:, act], rng)
        self.z[i] = act[local]

    def sequence_step(self, seed, sweep):
        for i in range(self.N):
            self.sample_sequence(i, np.random.default_rng([seed, sweep, _SEQUENCES, i]))

    def ar_step(self, seed, sweep):
        D, m = self.D, self.prior.M.shape[1]
        for k in range(self.K):
            n = 0
            Sxx = np.zeros((m, m))
            Syx = np.zeros((D, m))
            Syy = np.zeros((D, D))
            for i in range(self.N):
                sel = self.z[i] == k
                if not sel.any():
                    continue
                Y = self.designs[i][0][sel]
                X = self.designs[i][1][sel]
                n += Y.shape[0]
                Sxx += X.T @ X
                Syx += Y.T @ X
                Syy += Y.T @ Y
            post = self.prior.posterior_from_stats(n, Sxx, Syx, Syy)
            self.states[k] = post.sample(np.random.default_rng([seed, sweep, _AR, k]), index=k)
        self.refresh_emissions()

    def transition_step(self, seed, sweep):
        for i in range(self.N):
            act = self.active(i)
            hmm = sample_transitions(StateSequence(self.ids[i], self.z[i]), act,
                                     self.hyper.gamma, self.hyper.kappa,
                                     np.random.default_rng([seed, sweep, _TRANSITIONS, i]))
            self.trans[i] = hmm.trans


def initial_fit(dataset: Dataset, hyper: Hyperparams) -> ModelFit:
    """One shared state used by every series, parameters drawn from the prior."""
    D = dataset.series[0].D
    rng = np.random.default_rng([hyper.seed, _INIT_STREAM])
    state = hyper.prior(D).sample(rng, index=0)
    N = len(dataset)
    hmms = [SeriesHMM(s.id, [0], [[1.0]]) for s in dataset.series]
    seqs = [StateSequence(s.id, np.zeros(s.T - hyper.lag, dtype=np.int64)) for s in dataset.series]
    return ModelFit([s.id for s in dataset.series], [state], FeatureMatrix(np.ones((N, 1), bool)),
                    hmms, seqs, hyper, {})


def _validate_dataset(dataset: Dataset, hyper: Hyperparams, allow_raw: bool):
    if len(dataset) == 0:
        raise ValidationError("cannot fit an empty dataset")
    hyper.validate(dataset.series[0].D)
    for s in dataset.series:
        _check_length(s.values, hyper.lag, s.id)
    if not allow_raw and not dataset.normalized:
        bad = [s.id for s in dataset.series if not _is_normalized(s)]
        if bad:
            raise ValidationError(
                f"series not z-score normalized (pass allow_raw=True to fit raw signals): {bad[:5]}"
            )


def resample_features(fit: ModelFit, dataset: Dataset, rng) -> ModelFit:
    """One feature-step sweep over all series; returns a new fit."""
    rng = np.random.default_rng(rng)
    chain = _Chain(fit, dataset)
    chain.feature_step(rng)
    return chain.to_fit(dict(fit.diagnostics))


def joint_log_likelihood(fit: ModelFit, dataset: Dataset) -> float:
    return _Chain(fit, dataset).loglik()


def fit(dataset: Dataset, hyper: Hyperparams | None = None, allow_raw=False, callback=None) -> ModelFit:
    """Run ``hyper.sweeps`` MCMC sweeps from the one-state initialization.

    Returns the final sample; ``diagnostics`` carries the per-sweep complete-data
    log-likelihood and state count.  Deterministic given ``hyper.seed``.
    """
    hyper = Hyperparams() if hyper is None else hyper
    _validate_dataset(dataset, hyper, allow_raw)
    start = initial_fit(dataset, hyper)
    chain = _Chain(start, dataset)
    seed = hyper.seed
    trace, ks = [], []
    for sweep in range(hyper.sweeps):
        chain.feature_step(np.random.default_rng([seed, sweep, _FEATURES]))
        chain.sequence_step(seed, sweep)
        chain.ar_step(seed, sweep)
        chain.transition_step(seed, sweep)
        ll = chain.loglik()
        if not np.isfinite(ll):
            raise FloatingPointError(f"non-finite log-likelihood at sweep {sweep}")
        trace.append(ll)
        ks.append(chain.K)
        if callback is not None:
            callback(sweep, chain)
        if sweep % 100 == 0:
            log.debug("sweep %d: K=%d loglik=%.3f", sweep, chain.K, ll)
    diagnostics = {
        "loglik": trace,
        "K": ks,
        "burn_in": hyper.burn_in,
        "births": chain.births,
        "deaths": chain.deaths,
    }
    return chain.to_fit(diagnostics)


def relabel(fit: ModelFit, perm) -> ModelFit:
    """Rename global state k to ``perm[k]``; an equivalent fit."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(fit.K)):
        raise ValidationError("perm must be a permutation of 0..K-1")
    inv = np.argsort(perm)
    states = [ARState(k, fit.states[inv[k]].A.copy(), fit.states[inv[k]].Sigma.copy())
              for k in range(fit.K)]
    F = fit.F.F[:, inv]
    hmms = []
    for h in fit.hmms:
        new_ids = perm[h.active]
        order = np.argsort(new_ids)
        hmms.append(SeriesHMM(h.id, new_ids[order].tolist(), h.trans[np.ix_(order, order)]))
    seqs = [StateSequence(s.id, perm[s.z]) for s in fit.sequences]
    return ModelFit(list(fit.ids), states, FeatureMatrix(F), hmms, seqs, fit.hyper,
                    dict(fit.diagnostics))


def prune_rare_states(fit: ModelFit, dataset: Dataset, threshold=0.05) -> ModelFit:
    """Drop global states active in fewer than ``threshold * N`` series.

    Series that lose a state are re-decoded with the Viterbi path over what
    remains.  A series left with no state keeps its most-used one.
    """
    N = fit.N
    counts = fit.F.counts
    keep = counts >= threshold * N
    F = fit.F.F & keep[None, :]
    fallback = []
    for i in range(N):
        if not F[i].any():
            used = np.bincount(fit.sequences[i].z, minlength=fit.K)
            used = np.where(fit.F.F[i], used, -1)
            k = int(np.argmax(used))
            F[i, k] = True
            fallback.append((fit.ids[i], k))
    kept = np.flatnonzero(F.any(axis=0))
    remap = np.full(fit.K, -1, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    states = [ARState(new, fit.states[old].A.copy(), fit.states[old].Sigma.copy())
              for new, old in enumerate(kept)]
    lag = fit.hyper.lag
    by_id = {s.id: s for s in dataset.series}
    hmms, seqs = [], []
    redecoded = []
    for i, (h, s) in enumerate(zip(fit.hmms, fit.sequences)):
        new_active = np.flatnonzero(F[i])
        if np.array_equal(new_active, np.asarray(h.active)):
            hmms.append(SeriesHMM(h.id, remap[new_active].tolist(), h.trans.copy()))
            seqs.append(StateSequence(s.id, remap[s.z]))
            continue
        pos = [h.active.index(int(k)) for k in new_active]
        trans = _row_normalize(h.trans[np.ix_(pos, pos)])
        targets, X = lagged(by_id[h.id].values, lag)
        E = emission_matrix([fit.states[k] for k in new_active], targets, X)
        path, _ = viterbi(uniform_log_init(new_active.size), trans, E)
        hmms.append(SeriesHMM(h.id, remap[new_active].tolist(), trans))
        seqs.append(StateSequence(s.id, remap[new_active[path]]))
        redecoded.append(h.id)
    diagnostics = dict(fit.diagnostics)
    diagnostics["pruning"] = {
        "threshold": threshold,
        "kept_states": kept.tolist(),
        "removed_states": np.flatnonzero(~np.isin(np.arange(fit.K), kept)).tolist(),
        "fallback": [[sid, int(k)] for sid, k in fallback],
        "redecoded": redecoded,
    }
    if fallback:
        log.warning("pruning emptied %d series; each kept its most-used state", len(fallback))
    return ModelFit(list(fit.ids), states, FeatureMatrix(F[:, kept]), hmms, seqs, fit.hyper,
                    diagnostics)
