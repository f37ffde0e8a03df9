"""Loading, validating and normalizing collections of multivariate series.

A dataset directory holds one CSV per series (the file stem is the series
id, the header row lists channel names) and an optional ``constructs.csv``
whose first column ``id`` keys per-series construct scores and demographics.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConflictError,
    ParseError,
    SchemaMismatchError,
    UnknownReferenceError,
    ValidationError,
)

log = logging.getLogger(__name__)

CONSTRUCTS_FILE = "constructs.csv"

# Table 1 of the OMsignal feature set; handy default schema for real dumps.
OMSIGNAL_CHANNELS = (
    "Avg. Breathing Depth", "Avg. Breathing Rate", "Heart Rate",
    "Std. Breathing Depth", "Std. Breathing Rate", "R-R Peak Coverage",
    "Intensity", "Cadence", "Steps", "Sitting", "Supine", "Low G Coverage",
    "Avg. G Force", "Std. G Force", "Angle From Vertical",
    "Avg. X-Acceleration", "Std. X-Acceleration", "Avg. Y-Acceleration",
    "Std. Y-Acceleration", "Avg. Z-Acceleration", "Std. Z-Acceleration",
)


@dataclass(frozen=True)
class ChannelSchema:
    names: tuple[str, ...]
    units: tuple[str, ...] = ()

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValidationError("channel schema must name at least one channel")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate channel names in schema: {dupes}")
        units = tuple(self.units) or ("",) * len(names)
        if len(units) != len(names):
            raise ValidationError("units must have one entry per channel")
        object.__setattr__(self, "units", units)

    def __len__(self):
        return len(self.names)


@dataclass
class MultiSeries:
    id: str
    values: np.ndarray
    schema: ChannelSchema
    constant_channels: tuple[str, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError(f"series {self.id!r}: values must be a T x D matrix")
        if self.values.shape[1] != len(self.schema):
            raise ValidationError(
                f"series {self.id!r}: {self.values.shape[1]} columns but schema has "
                f"{len(self.schema)} channels"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"series {self.id!r} contains NaN or Inf")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    series: list[MultiSeries]
    constructs: pd.DataFrame | None = None
    raw: list[MultiSeries] | None = None  # kept once the series are normalized
    normalized: bool = False

    def __post_init__(self):
        ids = [s.id for s in self.series]
        seen = set()
        for sid in ids:
            if sid in seen:
                raise ConflictError(f"duplicate series id {sid!r}")
            seen.add(sid)
        if self.series:
            schema = self.series[0].schema
            for s in self.series[1:]:
                if s.schema.names != schema.names:
                    raise ValidationError(f"series {s.id!r} uses a different channel schema")
        if self.constructs is not None:
            unknown = [i for i in self.constructs.index if i not in seen]
            if unknown:
                raise UnknownReferenceError(
                    f"constructs reference unknown series ids: {', '.join(map(str, unknown))}"
                )

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.series]

    @property
    def schema(self) -> ChannelSchema:
        return self.series[0].schema

    def __len__(self):
        return len(self.series)


def _parse_float(text, path, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(path, row, column, text) from None
    if not np.isfinite(value):
        raise ParseError(path, row, column, text)
    return value


def read_series_csv(path: str | Path, schema: ChannelSchema | None = None) -> MultiSeries:
    """Read one series file. Columns are reordered to the schema order."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if schema is None:
            schema = ChannelSchema(tuple(header))
        missing = [n for n in schema.names if n not in header]
        extra = [h for h in header if h not in schema.names]
        if missing or extra or len(header) != len(schema):
            raise SchemaMismatchError(path, missing, extra)
        order = [header.index(n) for n in schema.names]
        rows = []
        # row numbers are 1-based file lines, header is line 1
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise ValidationError(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {len(header)}"
                )
            rows.append([_parse_float(cells[j], path, lineno, header[j]) for j in order])
    values = np.array(rows, dtype=float).reshape(len(rows), len(schema))
    return MultiSeries(id=path.stem, values=values, schema=schema)


def _read_constructs(path: Path) -> pd.DataFrame:
    table = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    if "id" not in table.columns:
        raise ValidationError(f"{path}: missing 'id' column")
    if table["id"].duplicated().any():
        dupes = table.loc[table["id"].duplicated(), "id"].tolist()
        raise ConflictError(f"{path}: duplicate ids {dupes}")
    return table.set_index("id")


def load_dataset(path: str | Path, schema: ChannelSchema | None = None) -> Dataset:
    """Load every ``*.csv`` series under ``path`` plus the optional constructs table.

    Series are ordered by file name so loading is deterministic.
    """
    root = Path(path)
    if not root.is_dir():
        raise ValidationError(f"data directory does not exist: {root}")
    files = sorted(
        p for p in root.iterdir()
        if p.is_file() and p.suffix.lower() == ".csv" and p.name != CONSTRUCTS_FILE
    )
    series: list[MultiSeries] = []
    owners: dict[str, Path] = {}
    for f in files:
        if f.stem in owners:
            raise ConflictError(f"series id {f.stem!r} defined by both {owners[f.stem]} and {f}")
        owners[f.stem] = f
        s = read_series_csv(f, schema)
        schema = s.schema
        series.append(s)
    constructs = None
    cpath = root / CONSTRUCTS_FILE
    if cpath.exists():
        constructs = _read_constructs(cpath)
    return Dataset(series=series, constructs=constructs)


def write_series_csv(series: MultiSeries, path: str | Path) -> None:
    # repr() gives the shortest string that round-trips the exact double
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(series.schema.names)
        for row in series.values:
            writer.writerow([repr(float(v)) for v in row])


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for s in dataset.series:
        write_series_csv(s, root / f"{s.id}.csv")
    if dataset.constructs is not None:
        dataset.constructs.to_csv(root / CONSTRUCTS_FILE, index_label="id",
                                  float_format="%.17g", lineterminator="\n")
    return root


def zscore_normalize(series: MultiSeries) -> MultiSeries:
    """Per-channel z-score using the population standard deviation.

    Constant channels become all-zero and are listed in ``constant_channels``.
    """
    x = series.values
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt(np.mean(centered ** 2, axis=0))
    # std below this is rounding noise of a constant channel
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(constant, 1.0, std)
    out = np.where(constant, 0.0, centered / safe)
    flagged = tuple(n for n, c in zip(series.schema.names, constant) if c)
    if flagged:
        log.warning("series %s: constant channels set to zero: %s", series.id, ", ".join(flagged))
    return replace(series, values=out, constant_channels=flagged)


def normalize_dataset(dataset: Dataset) -> Dataset:
    """Z-score every series, keeping the unnormalized values on ``raw``."""
    if dataset.normalized:
        return dataset
    return Dataset(
        series=[zscore_normalize(s) for s in dataset.series],
        constructs=dataset.constructs,
        raw=list(dataset.series),
        normalized=True,
    )


def construct_vector(dataset: Dataset, name: str, ids: Sequence[str] | None = None) -> np.ndarray:
    """Construct scores aligned to ``ids`` (default: dataset order); NaN where absent."""
    if dataset.constructs is None or name not in dataset.constructs.columns:
        raise ValidationError(f"unknown construct {name!r}")
    ids = dataset.ids if ids is None else list(ids)
    col = pd.to_numeric(dataset.constructs[name], errors="coerce")
    return col.reindex(ids).to_numpy(dtype=float)


def numeric_constructs(dataset: Dataset) -> list[str]:
    """Columns of the constructs table that hold real-valued scores."""
    if dataset.constructs is None:
        return []
    return [c for c in dataset.constructs.columns
            if pd.api.types.is_numeric_dtype(dataset.constructs[c])]


def raw_summary_features(dataset: Dataset) -> np.ndarray:
    """Per-channel mean and variance of the unnormalized signals, N x 2D."""
    source = dataset.raw if dataset.raw is not None else dataset.series
    return np.array([np.concatenate([s.values.mean(axis=0), s.values.var(axis=0)])
                     for s in source])
