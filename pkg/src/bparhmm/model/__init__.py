"""Beta-process autoregressive HMM: types, priors and the MCMC sampler."""

from .ar import MNIW, ARState, ar_loglik, emission_matrix, lagged, sample_ar_params
from .hmm import ffbs, forward_filter, forward_loglik, viterbi
from .ibp import expected_dish_count, sample_ibp_prior
from .sampler import (
    birth_death_log_ratio,
    fit,
    initial_fit,
    joint_log_likelihood,
    prune_rare_states,
    relabel,
    resample_features,
    sample_state_sequence,
    sample_transitions,
)
from .types import FeatureMatrix, Hyperparams, ModelFit, SeriesHMM, StateSequence

__all__ = [
    "ARState", "FeatureMatrix", "Hyperparams", "MNIW", "ModelFit", "SeriesHMM",
    "StateSequence", "ar_loglik", "birth_death_log_ratio", "emission_matrix",
    "expected_dish_count", "ffbs", "fit", "forward_filter", "forward_loglik",
    "initial_fit", "joint_log_likelihood", "lagged", "prune_rare_states", "relabel",
    "resample_features", "sample_ar_params", "sample_ibp_prior",
    "sample_state_sequence", "sample_transitions", "viterbi",
]
