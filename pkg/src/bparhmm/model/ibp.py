"""Indian buffet process prior over the series-by-state feature matrix."""

import numpy as np

from ..errors import ValidationError
from .types import FeatureMatrix


def sample_ibp_prior(n, alpha, rng=None, require_nonempty=True, max_tries=10_000) -> FeatureMatrix:
    """Draw an n-row feature matrix from IBP(alpha).

    Customer j (1-based) takes existing dish k with probability m_k / j and
    then Poisson(alpha / j) new dishes.  With ``require_nonempty`` a row that
    comes up empty is redrawn (conditioning the row on having a dish).
    """
    if n < 1:
        raise ValidationError("IBP needs at least one customer")
    if alpha <= 0:
        raise ValidationError("IBP mass alpha must be positive")
    rng = np.random.default_rng(rng)
    counts = np.zeros(0, dtype=np.int64)
    rows = []
    for j in range(1, n + 1):
        for _ in range(max_tries):
            old = np.flatnonzero(rng.random(counts.size) < counts / j)
            n_new = int(rng.poisson(alpha / j))
            if old.size or n_new or not require_nonempty:
                break
        else:
            raise RuntimeError("could not draw a nonempty IBP row; alpha too small")
        new = np.arange(counts.size, counts.size + n_new)
        counts = np.concatenate([counts, np.zeros(n_new, dtype=np.int64)])
        taken = np.concatenate([old, new])
        counts[taken] += 1
        rows.append(taken)
    F = np.zeros((n, counts.size), dtype=bool)
    for i, ks in enumerate(rows):
        F[i, ks] = True
    return FeatureMatrix(F)


def expected_dish_count(n, alpha) -> float:
    """E[K] = alpha * H_n under the IBP without the nonempty-row guard."""
    return float(alpha * np.sum(1.0 / np.arange(1, n + 1)))
