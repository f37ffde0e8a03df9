"""Agglomerative clustering of series, dendrogram cuts and cluster-difference tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ValidationError

log = logging.getLogger(__name__)

LINKAGES = ("average", "single", "complete")
MIN_SIZE = 5


@dataclass
class Dendrogram:
    """Merge list in scipy's convention: leaves are 0..N-1, merge m creates node N+m."""

    leaves: list[str]
    merges: list[tuple[int, int, float, int]]

    @property
    def N(self):
        return len(self.leaves)

    @property
    def heights(self):
        return np.array([m[2] for m in self.merges])

    def linkage_matrix(self):
        return np.array([[a, b, h, s] for a, b, h, s in self.merges], dtype=float).reshape(-1, 4)

    def validate(self):
        if len(self.merges) != max(self.N - 1, 0):
            raise ValidationError("dendrogram needs N - 1 merges")
        if np.any(np.diff(self.heights) < 0):
            raise ValidationError("merge heights must be nondecreasing")
        size = [1] * self.N
        for a, b, _, s in self.merges:
            if size[a] + size[b] != s:
                raise ValidationError("merge sizes are inconsistent")
            size.append(s)
        return self


def agglomerate(dm, linkage="average") -> Dendrogram:
    """Bottom-up merging with Lance-Williams updates.

    Among equally close pairs the one with the smallest (row, column) position
    wins; a merged cluster keeps the smaller position.
    """
    if linkage not in LINKAGES:
        raise ValidationError(f"unknown linkage {linkage!r}; choose from {LINKAGES}")
    D = np.array(dm.values, dtype=float)
    n = D.shape[0]
    if n < 2:
        raise ValidationError("need at least two series to cluster")
    work = D.copy()
    work[np.tril_indices(n)] = np.inf
    sizes = np.ones(n, dtype=int)
    node = list(range(n))
    alive = np.ones(n, dtype=bool)
    merges = []
    for step in range(n - 1):
        flat = int(np.argmin(work))
        i, j = divmod(flat, n)
        h = float(work[i, j])
        a, b = sorted((node[i], node[j]))
        merges.append((a, b, h, int(sizes[i] + sizes[j])))
        # distances from the merged cluster (kept at position i) to every other one
        di, dj = D[i].copy(), D[j].copy()
        if linkage == "single":
            new = np.minimum(di, dj)
        elif linkage == "complete":
            new = np.maximum(di, dj)
        else:
            new = (sizes[i] * di + sizes[j] * dj) / (sizes[i] + sizes[j])
        D[i, :] = new
        D[:, i] = new
        sizes[i] += sizes[j]
        alive[j] = False
        node[i] = n + step
        work[j, :] = np.inf
        work[:, j] = np.inf
        for k in np.flatnonzero(alive):
            if k < i:
                work[k, i] = new[k]
            elif k > i:
                work[i, k] = new[k]
    return Dendrogram(list(dm.ids), merges).validate()


def cophenetic(dend: Dendrogram) -> np.ndarray:
    """Matrix of merge heights at which each leaf pair first joins."""
    n = dend.N
    members = {k: [k] for k in range(n)}
    C = np.zeros((n, n))
    for m, (a, b, h, _) in enumerate(dend.merges):
        A, B = members.pop(a), members.pop(b)
        C[np.ix_(A, B)] = h
        C[np.ix_(B, A)] = h
        members[n + m] = A + B
    return C


@dataclass
class ClusterLabels:
    labels: dict  # series id -> cluster index, -1 for unassigned
    min_size: int = MIN_SIZE

    @property
    def clusters(self) -> dict:
        out = {}
        for sid, c in self.labels.items():
            if c >= 0:
                out.setdefault(c, []).append(sid)
        return out

    def to_frame(self):
        return pd.DataFrame({"id": list(self.labels), "cluster": list(self.labels.values())})


def cut(dend: Dendrogram, height, min_size=MIN_SIZE) -> ClusterLabels:
    """Components formed by merges at or below ``height``.

    Components with ``min_size`` or fewer members are unassigned (-1); the rest
    are numbered in order of their first leaf.
    """
    if height < 0:
        raise ValidationError("cut height must be nonnegative")
    n = dend.N
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    members = {k: k for k in range(n)}  # node id -> representative leaf
    for m, (a, b, h, _) in enumerate(dend.merges):
        ra, rb = find(members[a]), find(members[b])
        members[n + m] = ra
        if h <= height:
            parent[rb] = ra
    comps = {}
    for leaf in range(n):
        comps.setdefault(find(leaf), []).append(leaf)
    labels = [-1] * n
    next_label = 0
    for comp in sorted(comps.values(), key=min):
        if len(comp) > min_size:
            for leaf in comp:
                labels[leaf] = next_label
            next_label += 1
    return ClusterLabels({dend.leaves[k]: labels[k] for k in range(n)}, min_size)


def largest_gap_height(dend: Dendrogram) -> float:
    """Midpoint of the widest gap between consecutive merge heights."""
    h = dend.heights
    if h.size == 1:
        return float(h[0]) / 2
    k = int(np.argmax(np.diff(h)))
    return float(h[k] + h[k + 1]) / 2


def to_newick(dend: Dendrogram) -> str:
    n = dend.N
    heights = {k: 0.0 for k in range(n)}
    text = {k: _newick_name(dend.leaves[k]) for k in range(n)}
    for m, (a, b, h, _) in enumerate(dend.merges):
        text[n + m] = f"({text.pop(a)}:{h - heights[a]!r},{text.pop(b)}:{h - heights[b]!r})"
        heights[n + m] = h
    return (text[2 * n - 2] if n > 1 else text[0]) + ";"


def _newick_name(name):
    if any(c in name for c in "():,;[] '"):
        return "'" + name.replace("'", "''") + "'"
    return name


def parse_newick(text: str):
    """Parse Newick into nested ``(name, length, children)`` tuples."""
    text = text.strip()
    if not text.endswith(";"):
        raise ValidationError("Newick text must end with ';'")
    pos = 0

    def name():
        nonlocal pos
        if text[pos] == "'":
            out = []
            pos += 1
            while True:
                if text[pos] == "'":
                    if text[pos + 1:pos + 2] == "'":
                        out.append("'")
                        pos += 2
                        continue
                    pos += 1
                    return "".join(out)
                out.append(text[pos])
                pos += 1
        start = pos
        while text[pos] not in "():,;":
            pos += 1
        return text[start:pos]

    def node():
        nonlocal pos
        children = []
        if text[pos] == "(":
            pos += 1
            children.append(node())
            while text[pos] == ",":
                pos += 1
                children.append(node())
            if text[pos] != ")":
                raise ValidationError(f"expected ')' at {pos}")
            pos += 1
        label = name()
        length = None
        if text[pos] == ":":
            pos += 1
            start = pos
            while text[pos] not in ",);":
                pos += 1
            length = float(text[start:pos])
        return (label, length, children)

    tree = node()
    if text[pos] != ";":
        raise ValidationError(f"trailing characters in Newick text at {pos}")
    return tree


@dataclass
class GroupTest:
    variable: str
    test: str  # chi2 | kruskal | untestable
    statistic: float
    p_value: float
    n: int
    note: str = ""


def _is_categorical(col: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(col) or pd.api.types.is_bool_dtype(col)


def group_tests(labels: ClusterLabels, table: pd.DataFrame) -> list[GroupTest]:
    """Test each variable of ``table`` for differences between assigned clusters.

    Categorical columns: chi-square independence test (no continuity
    correction).  Numeric columns: Kruskal-Wallis.  Sorted by p-value,
    untestable variables last.
    """
    assigned = {sid: c for sid, c in labels.labels.items() if c >= 0}
    if len(set(assigned.values())) < 2:
        raise ValidationError("need at least two assigned clusters to compare")
    clusters = pd.Series(assigned, name="cluster")
    rows = table.reindex(clusters.index)
    results = []
    for var in table.columns:
        col = rows[var]
        ok = col.notna()
        g, x = clusters[ok], col[ok]
        if x.nunique() < 2 or g.nunique() < 2:
            results.append(GroupTest(var, "untestable", float("nan"), float("nan"), int(ok.sum()),
                                     "constant or single cluster"))
            continue
        if _is_categorical(table[var]):
            ctab = pd.crosstab(g, x.astype(str))
            stat, p, _, expected = stats.chi2_contingency(ctab.to_numpy(), correction=False)
            note = "expected count < 5 in some cell" if np.any(expected < 5) else ""
            results.append(GroupTest(var, "chi2", float(stat), float(p), int(ok.sum()), note))
        else:
            groups = [x[g == c].to_numpy(dtype=float) for c in sorted(g.unique())]
            stat, p = stats.kruskal(*groups)
            results.append(GroupTest(var, "kruskal", float(stat), float(p), int(ok.sum())))
    return sorted(results, key=lambda r: (np.isnan(r.p_value), r.p_value, r.variable))


def state_usage_by_cluster(rep, labels: ClusterLabels) -> pd.DataFrame:
    """Mean representation vector (e.g. time share per state) of each assigned cluster."""
    frame = pd.DataFrame(rep.vectors, index=rep.ids)
    lab = pd.Series(labels.labels).reindex(rep.ids)
    frame = frame[lab >= 0]
    return frame.groupby(lab[lab >= 0]).mean()
