"""Versioned JSON/CSV serialization of pipeline artifacts.

Every JSON document carries ``format: 1``; readers reject anything else.
Floats are written with ``repr`` so values round-trip exactly and repeated
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .cluster import ClusterLabels, Dendrogram, to_newick
from .distance import DistanceMatrix
from .embedding import Representation
from .errors import FormatError, ValidationError
from .model.ar import ARState
from .model.types import FeatureMatrix, Hyperparams, ModelFit, SeriesHMM, StateSequence

FORMAT = 1


def _plain(obj):
    # numpy scalars/arrays to JSON-native values
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(doc) -> str:
    return json.dumps(_plain(doc), indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_json(doc, path):
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_json(path, kind=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise FormatError(f"{path}: unsupported or missing format version (expected {FORMAT})")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} document, found {doc.get('kind')!r}")
    return doc


# -- model fits ---------------------------------------------------------------

def _hyper_doc(h: Hyperparams):
    return {
        "alpha": h.alpha, "lag": h.lag, "kappa": h.kappa, "gamma": h.gamma,
        "prior_M": h.prior_M, "prior_V": h.prior_V, "prior_S": h.prior_S,
        "prior_dof": h.prior_dof, "sweeps": h.sweeps, "burn_in": h.burn_in,
        "seed": h.seed, "birth_death_moves": h.birth_death_moves,
    }


def _hyper_from(doc) -> Hyperparams:
    arr = {k: (None if doc.get(k) is None else np.asarray(doc[k], dtype=float))
           for k in ("prior_M", "prior_V", "prior_S")}
    return Hyperparams(alpha=float(doc["alpha"]), lag=int(doc["lag"]), kappa=float(doc["kappa"]),
                       gamma=float(doc["gamma"]), prior_dof=doc.get("prior_dof"),
                       sweeps=int(doc["sweeps"]), burn_in=int(doc["burn_in"]),
                       seed=int(doc["seed"]), birth_death_moves=int(doc.get("birth_death_moves", 1)),
                       **arr)


def fit_to_doc(fit: ModelFit) -> dict:
    return {
        "format": FORMAT,
        "kind": "model-fit",
        "ids": list(fit.ids),
        "hyper": _hyper_doc(fit.hyper),
        "states": [{"A": s.A, "Sigma": s.Sigma} for s in fit.states],
        "F": fit.F.F.astype(int),
        "hmms": [{"id": h.id, "active": h.active, "trans": h.trans} for h in fit.hmms],
        "sequences": [{"id": s.id, "z": s.z} for s in fit.sequences],
        "diagnostics": fit.diagnostics,
    }


def fit_from_doc(doc) -> ModelFit:
    try:
        ids = [str(i) for i in doc["ids"]]
        states = [ARState(k, np.asarray(s["A"], dtype=float), np.asarray(s["Sigma"], dtype=float))
                  for k, s in enumerate(doc["states"])]
        F = np.asarray(doc["F"], dtype=bool).reshape(len(ids), len(states))
        hmms = [SeriesHMM(h["id"], h["active"], h["trans"]) for h in doc["hmms"]]
        seqs = [StateSequence(s["id"], s["z"]) for s in doc["sequences"]]
        fit = ModelFit(ids, states, FeatureMatrix(F), hmms, seqs, _hyper_from(doc["hyper"]),
                       dict(doc.get("diagnostics", {})))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model-fit document: {exc}") from exc
    return fit.validate(tol=1e-9)


def save_fit(fit: ModelFit, path):
    write_json(fit_to_doc(fit), path)


def load_fit(path) -> ModelFit:
    return fit_from_doc(read_json(path, "model-fit"))


def write_trace(fit: ModelFit, path):
    diag = fit.diagnostics
    frame = pd.DataFrame({"sweep": np.arange(len(diag.get("loglik", []))),
                          "loglik": diag.get("loglik", []), "K": diag.get("K", [])})
    _write_frame(frame, path)


# -- distances and representations --------------------------------------------

def _write_frame(frame: pd.DataFrame, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(frame.columns)
    for row in frame.itertuples(index=False):
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def save_distance(dm: DistanceMatrix, stem):
    """Writes ``<stem>.json`` and ``<stem>.csv`` (header = ids, no row labels)."""
    stem = Path(stem)
    write_json({"format": FORMAT, "kind": "distance", "measure": dm.measure,
                "ids": dm.ids, "values": dm.values}, stem.with_suffix(".json"))
    _write_frame(pd.DataFrame(dm.values, columns=dm.ids), stem.with_suffix(".csv"))


def load_distance(path) -> DistanceMatrix:
    doc = read_json(path, "distance")
    return DistanceMatrix([str(i) for i in doc["ids"]], np.asarray(doc["values"], dtype=float),
                          doc["measure"]).validate()


def save_representation(rep: Representation, stem):
    stem = Path(stem)
    write_json({"format": FORMAT, "kind": "representation", "rep_kind": rep.kind, "K": rep.K,
                "ids": rep.ids, "vectors": rep.vectors}, stem.with_suffix(".json"))
    frame = pd.DataFrame(rep.vectors, columns=[f"v{j}" for j in range(rep.d)])
    frame.insert(0, "id", rep.ids)
    _write_frame(frame, stem.with_suffix(".csv"))


def load_representation(path) -> Representation:
    doc = read_json(path, "representation")
    ids = [str(i) for i in doc["ids"]]
    vectors = np.asarray(doc["vectors"], dtype=float).reshape(len(ids), -1)
    return Representation(ids, vectors, doc["rep_kind"], doc.get("K"))


# -- clustering ---------------------------------------------------------------

def save_dendrogram(dend: Dendrogram, stem):
    stem = Path(stem)
    write_json({"format": FORMAT, "kind": "dendrogram", "leaves": dend.leaves,
                "merges": [list(m) for m in dend.merges]}, stem.with_suffix(".json"))
    Path(stem.with_suffix(".nwk")).write_text(to_newick(dend) + "\n", encoding="utf-8")


def load_dendrogram(path) -> Dendrogram:
    doc = read_json(path, "dendrogram")
    merges = [(int(a), int(b), float(h), int(s)) for a, b, h, s in doc["merges"]]
    return Dendrogram([str(x) for x in doc["leaves"]], merges).validate()


def save_labels(labels: ClusterLabels, path):
    _write_frame(labels.to_frame(), path)


def load_labels(path, min_size=5) -> ClusterLabels:
    frame = pd.read_csv(path, dtype={"id": str})
    if list(frame.columns) != ["id", "cluster"]:
        raise FormatError(f"{path}: expected columns id,cluster")
    return ClusterLabels(dict(zip(frame["id"], frame["cluster"].astype(int))), min_size)


# -- prediction reports -------------------------------------------------------

def save_reports(reports, stem, table: pd.DataFrame | None = None):
    """``<stem>.json`` holds every report; ``<stem>.csv`` the construct x representation table."""
    stem = Path(stem)
    write_json({"format": FORMAT, "kind": "prediction",
                "reports": [r.to_json() for r in reports]}, stem.with_suffix(".json"))
    if table is not None:
        frame = table.reset_index()
        _write_frame(frame, stem.with_suffix(".csv"))


def check_ids(expected, got, what):
    if list(expected) != list(got):
        raise ValidationError(f"{what} describes different series than the fit")
