"""
mono_gbdt/boosting.py — Boosting rounds, staged metrics, prediction and model JSON.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from mono_gbdt.config import BoosterConfig, FeatureKind, ObjectiveKind
from mono_gbdt.constraints import PenaltyParams, make_engine
from mono_gbdt.dataset import BinnedDataset, FeatureSchema, FeatureSpec, RawTable, apply_bins
from mono_gbdt.errors import MetricError, ModelFormatError, ParameterError, SchemaError, TrainingError
from mono_gbdt.objective import METRICS, base_margin, grad_hess, transform
from mono_gbdt.tree import Tree, TreeGrower, predict_binned, tree_from_dict, tree_to_dict

logger = logging.getLogger(__name__)

MODEL_FORMAT = "mono-gbdt-model"
MODEL_VERSION = 1
STAGED_COLUMNS = ["iteration", "metric", "split", "value"]


def default_metrics(kind: ObjectiveKind) -> tuple[str, ...]:
    return ("logloss", "accuracy", "auc") if kind is ObjectiveKind.BINARY else ("mse",)


@dataclass
class BoosterModel:
    """Trees hold unshrunk leaf outputs; margin = base + learning_rate × Σ outputs."""
    trees: list[Tree]
    base_margin: float
    config: BoosterConfig
    feature_names: tuple[str, ...]
    boundaries: tuple[np.ndarray, ...]
    directions: np.ndarray
    schema: Optional[FeatureSchema] = None

    def predict_margin_codes(self, codes: np.ndarray) -> np.ndarray:
        margins = np.full(codes.shape[0], self.base_margin)
        for tree in self.trees:
            margins += self.config.learning_rate * predict_binned(tree, codes)
        return margins

    def predict_margin(self, binned: BinnedDataset) -> np.ndarray:
        return self.predict_margin_codes(binned.codes)

    def predict_binned(self, binned: BinnedDataset) -> np.ndarray:
        return np.asarray(transform(self.config.objective, self.predict_margin(binned)))


def resolve_directions(dataset: BinnedDataset, config: BoosterConfig) -> np.ndarray:
    if config.monotone_constraints is None:
        return dataset.directions
    directions = np.asarray(config.monotone_constraints, dtype=np.int8)
    if directions.size != dataset.n_features:
        raise ParameterError(
            f"monotone_constraints has {directions.size} entries, dataset has {dataset.n_features} features"
        )
    return directions


def _record(records: list, iteration: int, split: str, kind: ObjectiveKind,
            margins: np.ndarray, labels: np.ndarray, metrics: Sequence[str]) -> None:
    predictions = transform(kind, margins)
    for name in metrics:
        try:
            value = METRICS[name](predictions, labels)
        except MetricError:
            value = float("nan")
        records.append({"iteration": iteration, "metric": name, "split": split, "value": value})


def train(
    dataset: BinnedDataset,
    config: BoosterConfig,
    staged_eval: Optional[BinnedDataset] = None,
    metrics: Optional[Sequence[str]] = None,
    log_every: int = 0,
    schema: Optional[FeatureSchema] = None,
) -> tuple[BoosterModel, pd.DataFrame]:
    """Boost ``config.iterations`` trees; returns the model and its staged metric table.

    Pass ``metrics=()`` to skip metric bookkeeping entirely.
    """
    config.validate()
    if dataset.n_rows == 0:
        raise TrainingError("Cannot train on an empty dataset")
    kind = config.objective
    metrics = default_metrics(kind) if metrics is None else tuple(metrics)
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise ParameterError(f"Unknown metric(s): {', '.join(unknown)}")

    directions = resolve_directions(dataset, config)
    labels = dataset.labels
    base = base_margin(kind, labels)
    margins = np.full(dataset.n_rows, base)
    eval_margins = np.full(staged_eval.n_rows, base) if staged_eval is not None else None
    tree_config = config.tree_config()
    penalty_cfg = PenaltyParams(config.monotone_penalty, config.penalty_epsilon)

    trees: list[Tree] = []
    records: list[dict] = []
    for iteration in range(1, config.iterations + 1):
        gh = grad_hess(kind, margins, labels)
        engine = make_engine(config.monotone_method, directions)
        grower = TreeGrower(dataset, gh, tree_config, engine, penalty_cfg)
        tree = grower.grow()
        trees.append(tree)
        for leaf, rows in grower.leaf_rows.items():
            margins[rows] += config.learning_rate * tree.nodes[leaf].value

        if metrics:
            _record(records, iteration, "train", kind, margins, labels, metrics)
            if staged_eval is not None:
                eval_margins += config.learning_rate * predict_binned(tree, staged_eval.codes)
                _record(records, iteration, "test", kind, eval_margins, staged_eval.labels, metrics)
        if log_every and iteration % log_every == 0:
            logger.info("iteration %d/%d: %d leaves", iteration, config.iterations, tree.n_leaves)

    model = BoosterModel(
        trees=trees,
        base_margin=base,
        config=config,
        feature_names=dataset.feature_names,
        boundaries=dataset.boundaries,
        directions=directions,
        schema=schema,
    )
    logger.info(
        "trained %d trees (%s, gamma=%g) on %d rows",
        len(trees), config.monotone_method.value, config.monotone_penalty, dataset.n_rows,
    )
    return model, pd.DataFrame.from_records(records, columns=STAGED_COLUMNS)


def _binned_for(model: BoosterModel, raw: RawTable) -> BinnedDataset:
    label = model.schema.label if model.schema is not None else None
    expected = set(model.feature_names) | ({label} if label else set())
    unknown = [c for c in raw.column_names if c not in expected]
    if unknown:
        raise SchemaError(f"Column '{unknown[0]}' is not a model feature", column=unknown[0])
    missing = [name for name in model.feature_names if name not in raw.frame.columns]
    if missing:
        raise SchemaError(f"Model feature '{missing[0]}' is missing from the input", column=missing[0])
    return apply_bins(raw, model.feature_names, model.boundaries, model.directions, label=label)


def predict(model: BoosterModel, raw: RawTable) -> np.ndarray:
    """Scores for raw (one-hot encoded) rows: margins for l2, probabilities for binary."""
    return model.predict_binned(_binned_for(model, raw))


def evaluate(model: BoosterModel, raw: RawTable, metrics: Optional[Sequence[str]] = None) -> dict[str, float]:
    binned = _binned_for(model, raw)
    label = model.schema.label if model.schema is not None else None
    if label is None or label not in raw.frame.columns:
        raise SchemaError(f"Label column '{label}' is required for evaluation", column=label)
    predictions = model.predict_binned(binned)
    names = default_metrics(model.config.objective) if metrics is None else metrics
    return {name: METRICS[name](predictions, binned.labels) for name in names}


# ── Model JSON ──


def serialize_model(model: BoosterModel) -> str:
    document = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "base_margin": model.base_margin,
        "config": model.config.to_dict(),
        "feature_names": list(model.feature_names),
        "boundaries": [[float(v) for v in b] for b in model.boundaries],
        "directions": [int(d) for d in model.directions],
        "schema": (
            {"label": model.schema.label, "features": model.schema.to_json_dict()}
            if model.schema is not None else None
        ),
        "trees": [tree_to_dict(tree) for tree in model.trees],
    }
    return json.dumps(document, sort_keys=True)


def deserialize_model(text: str) -> BoosterModel:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"Model document is not valid JSON: {e}") from e
    if not isinstance(document, dict) or document.get("format") != MODEL_FORMAT:
        raise ModelFormatError("Not a mono-gbdt model document")
    if document.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"Unsupported model version {document.get('version')!r}")
    try:
        feature_names = tuple(document["feature_names"])
        boundaries = tuple(np.asarray(b, dtype=float) for b in document["boundaries"])
        schema = None
        if document.get("schema"):
            schema = FeatureSchema(
                {
                    name: FeatureSpec(FeatureKind(spec["kind"]), int(spec["monotone_direction"]))
                    for name, spec in document["schema"]["features"].items()
                },
                label=document["schema"]["label"],
            )
        return BoosterModel(
            trees=[tree_from_dict(t, feature_names, boundaries) for t in document["trees"]],
            base_margin=float(document["base_margin"]),
            config=BoosterConfig.from_dict(document["config"]),
            feature_names=feature_names,
            boundaries=boundaries,
            directions=np.asarray(document["directions"], dtype=np.int8),
            schema=schema,
        )
    except (KeyError, TypeError, ValueError, ParameterError) as e:
        raise ModelFormatError(f"Malformed model document: {e}") from e


def save_model(model: BoosterModel, path) -> None:
    Path(path).write_text(serialize_model(model), encoding="utf-8")


def load_model(path) -> BoosterModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"Model file not found: {path}")
    return deserialize_model(path.read_text(encoding="utf-8"))
