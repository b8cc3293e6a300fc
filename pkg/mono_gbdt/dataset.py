"""
mono_gbdt/dataset.py — CSV ingest, Adult preprocessing, one-hot encoding, binning and
Monte-Carlo train/test splits.

Everything here is a pure transformation: inputs are never mutated and outputs are safe
to share between threads once built.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import requests

from mono_gbdt.config import ADULT_BASE_URL, FeatureKind
from mono_gbdt.errors import DatasetError, DatasetParseError, ParameterError, SchemaError

logger = logging.getLogger(__name__)

MISSING = "missing"

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country", "income",
]
ADULT_LABEL = "income"
ADULT_CONTINUOUS = {
    "age", "fnlwgt", "education_num", "capital_gain", "capital_loss", "hours_per_week",
}
ADULT_MONOTONE = {"age": 1, "education_num": 1, "hours_per_week": 1}
ADULT_FILES = ("adult.data", "adult.test")


# ── Data models ──


@dataclass(frozen=True)
class RawTable:
    """Column-named table of text or numeric cells, backed by a DataFrame."""
    frame: pd.DataFrame

    def __post_init__(self):
        names = list(self.frame.columns)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"Duplicate column names: {dupes}", column=dupes[0])

    @property
    def column_names(self) -> list[str]:
        return [str(c) for c in self.frame.columns]

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def column(self, name: str) -> pd.Series:
        if name not in self.frame.columns:
            raise SchemaError(f"Column '{name}' not found", column=name)
        return self.frame[name]


@dataclass(frozen=True)
class FeatureSpec:
    kind: FeatureKind = FeatureKind.CONTINUOUS
    monotone_direction: int = 0


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature kinds and monotone directions, plus the label column name."""
    features: dict[str, FeatureSpec]
    label: str = ADULT_LABEL

    @property
    def names(self) -> list[str]:
        return list(self.features)

    @property
    def directions(self) -> np.ndarray:
        return np.array([s.monotone_direction for s in self.features.values()], dtype=np.int8)

    def validate(self, raw: RawTable) -> "FeatureSchema":
        for name, spec in self.features.items():
            if name not in raw.frame.columns:
                raise SchemaError(f"Schema feature '{name}' is not a table column", column=name)
            if spec.monotone_direction not in (-1, 0, 1):
                raise ParameterError(
                    f"Feature '{name}' has monotone direction {spec.monotone_direction}"
                )
            if spec.monotone_direction != 0 and spec.kind is not FeatureKind.CONTINUOUS:
                raise SchemaError(
                    f"Categorical feature '{name}' cannot carry a monotone direction", column=name
                )
        return self

    def to_json_dict(self) -> dict:
        return {
            name: {"kind": spec.kind.value, "monotone_direction": spec.monotone_direction}
            for name, spec in self.features.items()
        }


@dataclass(frozen=True)
class BinnedDataset:
    """Column-binned feature matrix with labels and monotone directions.

    ``codes[i, f]`` is the bin ordinal of row i on feature f; bin b of feature f holds the
    values v with ``boundaries[f][b-1] < v <= boundaries[f][b]``.
    """
    feature_names: tuple[str, ...]
    codes: np.ndarray                    # (n_rows, n_features), uint8 or uint16
    boundaries: tuple[np.ndarray, ...]   # per-feature bin upper boundaries
    labels: np.ndarray
    directions: np.ndarray               # (n_features,) int8 in {-1, 0, 1}

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    @property
    def n_features(self) -> int:
        return self.codes.shape[1]

    @cached_property
    def n_bins(self) -> np.ndarray:
        return np.array([len(b) for b in self.boundaries], dtype=np.int64)

    @property
    def max_bins(self) -> int:
        return int(self.n_bins.max()) if self.n_features else 1

    @property
    def unsplittable(self) -> np.ndarray:
        return self.n_bins <= 1

    @cached_property
    def flat_codes(self) -> np.ndarray:
        """Codes offset per feature so one bincount fills every histogram at once."""
        offsets = np.arange(self.n_features, dtype=np.int64) * self.max_bins
        return self.codes.astype(np.int64) + offsets[None, :]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "BinnedDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, codes=np.ascontiguousarray(self.codes[rows]), labels=self.labels[rows])

    def with_directions(self, directions: Sequence[int] | np.ndarray) -> "BinnedDataset":
        directions = np.asarray(directions, dtype=np.int8)
        if directions.shape != (self.n_features,):
            raise ParameterError(
                f"monotone_constraints has {directions.size} entries, dataset has "
                f"{self.n_features} features"
            )
        return replace(self, directions=directions)


@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    test: np.ndarray
    trial_seed: int


# ── Ingest ──


def load_csv(
    path: str | Path,
    has_header: bool = True,
    missing_token: str = "?",
    names: Optional[Sequence[str]] = None,
    delimiter: str = ",",
    skip_rows: int = 0,
) -> RawTable:
    """Read delimiter-separated text; cells equal to ``missing_token`` become "missing"."""
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError(f"Cannot read {path}: no such file")
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=0 if has_header else None,
            names=list(names) if names is not None else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            skiprows=skip_rows,
        )
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        row = int(match.group(1)) if match else None
        raise DatasetParseError(f"{path}: ragged row at line {row}: {e}", row=row) from e
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=list(names) if names is not None else [])
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetParseError(f"Cannot read {path}: {e}") from e

    first_line = skip_rows + (2 if has_header else 1)
    if not isinstance(frame.index, pd.RangeIndex):
        # pandas turns a surplus leading field into an index instead of failing
        raise DatasetParseError(
            f"{path}: ragged row at line {first_line}: more cells than columns", row=first_line
        )
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        row = first_line + int(np.argmax(short))
        raise DatasetParseError(f"{path}: ragged row at line {row}: fewer cells than columns", row=row)

    if not has_header and names is None:
        frame.columns = [f"c{i}" for i in range(frame.shape[1])]
    frame = frame.replace({missing_token: MISSING}) if missing_token else frame
    for col in frame.columns:
        converted = pd.to_numeric(frame[col], errors="coerce")
        if len(frame) and not converted.isna().any():
            frame[col] = converted.astype(float)
    return RawTable(frame)


def download_adult(dest_dir: str | Path, base_url: str = ADULT_BASE_URL, timeout: float = 60.0) -> list[Path]:
    """Fetch adult.data / adult.test into ``dest_dir``; files already present are kept."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ADULT_FILES:
        target = dest / name
        if not target.exists():
            url = f"{base_url.rstrip('/')}/{name}"
            logger.info("Downloading %s", url)
            try:
                response = requests.get(url, timeout=timeout)
                response.raise_for_status()
            except requests.RequestException as e:
                raise DatasetError(f"Could not download {url}: {e}") from e
            target.write_bytes(response.content)
        paths.append(target)
    return paths


def load_adult(data_dir: str | Path) -> RawTable:
    """Load and concatenate the Adult train and test files (48842 rows in total)."""
    data_dir = Path(data_dir)
    tables = []
    for name in ADULT_FILES:
        path = data_dir / name
        if not path.is_file():
            raise DatasetError(f"Adult file missing: {path} (run prep-adult --download)")
        # adult.test opens with a one-cell banner line
        skip = 1 if name == "adult.test" else 0
        tables.append(load_csv(path, has_header=False, names=ADULT_COLUMNS, skip_rows=skip))
    frame = pd.concat([t.frame for t in tables], ignore_index=True)
    logger.info("Loaded Adult: %d rows", len(frame))
    return RawTable(frame)


# ── Preprocessing ──


def preprocess_adult(raw: RawTable) -> tuple[RawTable, FeatureSchema]:
    """Drop `education`, map the income label to 0/1 and mark the three monotone features."""
    frame = raw.frame.rename(columns=lambda c: str(c).strip().replace("-", "_"))
    for name in ADULT_COLUMNS:
        if name not in frame.columns:
            raise SchemaError(f"Adult table lacks expected column '{name}'", column=name)

    frame = frame.drop(columns=["education"])
    income = frame[ADULT_LABEL].astype(str).str.strip().str.rstrip(".")
    frame[ADULT_LABEL] = (income == ">50K").astype(float)

    features = {}
    for name in ADULT_COLUMNS:
        if name in ("education", ADULT_LABEL):
            continue
        if name in ADULT_CONTINUOUS:
            try:
                frame[name] = pd.to_numeric(frame[name]).astype(float)
            except (TypeError, ValueError) as e:
                raise SchemaError(f"Continuous column '{name}' holds non-numeric cells", column=name) from e
            features[name] = FeatureSpec(FeatureKind.CONTINUOUS, ADULT_MONOTONE.get(name, 0))
        else:
            frame[name] = frame[name].astype(str)
            features[name] = FeatureSpec(FeatureKind.CATEGORICAL, 0)
    schema = FeatureSchema(features, label=ADULT_LABEL)
    return RawTable(frame), schema


def one_hot_encode(raw: RawTable, schema: FeatureSchema) -> tuple[RawTable, FeatureSchema]:
    """Replace every categorical feature by one `<feature>=<value>` 0/1 column per value."""
    pieces = []
    features: dict[str, FeatureSpec] = {}
    for name, spec in schema.features.items():
        column = raw.column(name)
        if spec.kind is FeatureKind.CATEGORICAL:
            dummies = pd.get_dummies(column.astype(str), prefix=name, prefix_sep="=", dtype=float)
            pieces.append(dummies)
            for dummy in dummies.columns:
                features[str(dummy)] = FeatureSpec(FeatureKind.CONTINUOUS, 0)
        else:
            pieces.append(column.astype(float).to_frame(name))
            features[name] = spec
    if schema.label in raw.frame.columns:
        pieces.append(raw.frame[[schema.label]])
    frame = pd.concat(pieces, axis=1) if pieces else pd.DataFrame(index=raw.frame.index)
    return RawTable(frame), FeatureSchema(features, label=schema.label)


# ── Binning ──


def _bin_boundaries(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Equal-frequency upper boundaries over the distinct values, at most ``max_bins``."""
    distinct, counts = np.unique(values, return_counts=True)
    if distinct.size == 0:
        return np.zeros(1)
    if distinct.size <= max_bins:
        return distinct.astype(float)
    cumulative = np.cumsum(counts)
    targets = cumulative[-1] * np.arange(1, max_bins) / max_bins
    cut = np.searchsorted(cumulative, targets, side="left")
    return np.unique(np.append(distinct[cut], distinct[-1])).astype(float)


def _assign_bins(values: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    codes = np.searchsorted(boundaries, values, side="left")
    return np.minimum(codes, len(boundaries) - 1)


def _numeric_column(raw: RawTable, name: str) -> np.ndarray:
    column = raw.column(name)
    try:
        values = column.to_numpy(dtype=float)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"Feature '{name}' is not numeric; one-hot encode it first", column=name) from e
    if np.isnan(values).any():
        raise SchemaError(f"Feature '{name}' holds missing values", column=name)
    return values


def _code_dtype(boundaries: Iterable[np.ndarray]) -> type:
    widest = max((len(b) for b in boundaries), default=1)
    return np.uint8 if widest <= 256 else np.uint16


def bin_features(raw: RawTable, schema: FeatureSchema, max_bins: int = 255) -> BinnedDataset:
    """Bin every schema feature by equal-frequency quantiles; constant features get one bin."""
    if max_bins < 2:
        raise ParameterError(f"max_bins={max_bins} must be >= 2")
    schema.validate(raw)
    columns = [_numeric_column(raw, name) for name in schema.names]
    boundaries = tuple(_bin_boundaries(values, max_bins) for values in columns)
    codes = _stack_codes(columns, boundaries, raw.n_rows)
    labels = raw.column(schema.label).to_numpy(dtype=float)
    dataset = BinnedDataset(
        feature_names=tuple(schema.names),
        codes=codes,
        boundaries=boundaries,
        labels=labels,
        directions=schema.directions,
    )
    flat = int(dataset.unsplittable.sum())
    if flat:
        logger.debug("%d constant feature(s) flagged unsplittable", flat)
    return dataset


def apply_bins(
    raw: RawTable,
    feature_names: Sequence[str],
    boundaries: Sequence[np.ndarray],
    directions: Sequence[int] | np.ndarray,
    label: Optional[str] = None,
) -> BinnedDataset:
    """Bin new rows with boundaries learned elsewhere."""
    columns = [_numeric_column(raw, name) for name in feature_names]
    boundaries = tuple(np.asarray(b, dtype=float) for b in boundaries)
    codes = _stack_codes(columns, boundaries, raw.n_rows)
    if label is not None and label in raw.frame.columns:
        labels = raw.frame[label].to_numpy(dtype=float)
    else:
        labels = np.zeros(raw.n_rows)
    return BinnedDataset(
        feature_names=tuple(feature_names),
        codes=codes,
        boundaries=boundaries,
        labels=labels,
        directions=np.asarray(directions, dtype=np.int8),
    )


def _stack_codes(columns: list[np.ndarray], boundaries: Sequence[np.ndarray], n_rows: int) -> np.ndarray:
    dtype = _code_dtype(boundaries)
    if not columns:
        return np.zeros((n_rows, 0), dtype=dtype)
    return np.ascontiguousarray(
        np.column_stack([_assign_bins(v, b) for v, b in zip(columns, boundaries)]).astype(dtype)
    )


# ── Splits ──


def mc_split(rows: int, train_ratio: float, trial_seed: int) -> SplitPlan:
    """One Monte-Carlo trial: the first floor(ratio × rows) permuted indices are train."""
    if rows <= 0:
        raise ParameterError("Cannot split an empty dataset")
    if not 0.0 < train_ratio < 1.0:
        raise ParameterError(f"train_ratio={train_ratio} must lie strictly between 0 and 1")
    permutation = np.random.default_rng(trial_seed).permutation(rows)
    n_train = int(math.floor(train_ratio * rows + 1e-9))
    return SplitPlan(
        train=np.sort(permutation[:n_train]),
        test=np.sort(permutation[n_train:]),
        trial_seed=trial_seed,
    )


# ── Schema files and prepared data ──


def load_schema_override(path: str | Path) -> dict[str, FeatureSpec]:
    """Read a JSON mapping feature name -> {kind, monotone_direction}."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetParseError(f"Cannot read schema file {path}: {e}") from e
    if not isinstance(data, dict):
        raise SchemaError(f"Schema file {path} must hold a JSON object")
    overrides = {}
    for name, entry in data.items():
        entry = entry or {}
        try:
            kind = FeatureKind(entry.get("kind", FeatureKind.CONTINUOUS.value))
        except ValueError:
            raise ParameterError(f"Feature '{name}': unknown kind {entry.get('kind')!r}") from None
        direction = int(entry.get("monotone_direction", 0))
        if direction not in (-1, 0, 1):
            raise ParameterError(f"Feature '{name}': monotone_direction must be -1, 0 or 1")
        overrides[str(name)] = FeatureSpec(kind, direction)
    return overrides


def apply_schema_override(schema: FeatureSchema, overrides: dict[str, FeatureSpec]) -> FeatureSchema:
    unknown = [name for name in overrides if name not in schema.features]
    if unknown:
        raise SchemaError(f"Schema override names unknown feature '{unknown[0]}'", column=unknown[0])
    features = {name: overrides.get(name, spec) for name, spec in schema.features.items()}
    return FeatureSchema(features, label=schema.label)


def schema_path_for(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(f"{csv_path.stem}_schema.json")


def save_prepared(raw: RawTable, schema: FeatureSchema, csv_path: str | Path) -> tuple[Path, Path]:
    """Write a prepared table plus its sibling `<stem>_schema.json`."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    raw.frame[schema.names + [schema.label]].to_csv(csv_path, index=False, float_format="%.17g")
    schema_path = schema_path_for(csv_path)
    schema_path.write_text(json.dumps(schema.to_json_dict(), indent=2), encoding="utf-8")
    return csv_path, schema_path


def load_prepared(
    csv_path: str | Path,
    schema_path: Optional[str | Path] = None,
    label: str = ADULT_LABEL,
) -> tuple[RawTable, FeatureSchema]:
    """Read a prepared CSV; every non-label column is a feature, directions from the schema file."""
    raw = load_csv(csv_path, has_header=True)
    if label not in raw.frame.columns:
        raise SchemaError(f"Label column '{label}' not found in {csv_path}", column=label)
    schema = FeatureSchema(
        {name: FeatureSpec() for name in raw.column_names if name != label}, label=label
    )
    schema_file = Path(schema_path) if schema_path else schema_path_for(csv_path)
    if schema_path or schema_file.exists():
        schema = apply_schema_override(schema, load_schema_override(schema_file))
    return raw, schema.validate(raw)
