"""
mono_gbdt/config.py — Configuration and data models for the boosting engine and its experiments.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import yaml

from mono_gbdt.errors import ParameterError


class ConstraintMode(str, Enum):
    NONE = "none"
    BASIC = "basic"
    FAST = "fast"
    SLOW = "slow"


class ObjectiveKind(str, Enum):
    BINARY = "binary_logloss"
    L2 = "l2"

    @classmethod
    def parse(cls, value: str | "ObjectiveKind") -> "ObjectiveKind":
        if isinstance(value, ObjectiveKind):
            return value
        aliases = {"binary": cls.BINARY, "binary_logloss": cls.BINARY,
                   "l2": cls.L2, "regression": cls.L2, "mse": cls.L2}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ParameterError(f"Unknown objective '{value}' (expected binary or l2)") from None


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


class CheckStatus(Enum):
    PASS = "pass"
    FAIL = "fail"
    WARN = "warn"


@dataclass
class CheckResult:
    """Outcome of comparing an observed experiment value with its expectation."""
    check_id: str
    name: str
    category: str          # "figure-example" | "timing" | "benchmark"
    status: CheckStatus
    message: str
    evidence: Optional[str] = None


def parse_mode(value: str | ConstraintMode) -> ConstraintMode:
    if isinstance(value, ConstraintMode):
        return value
    try:
        return ConstraintMode(str(value).strip().lower())
    except ValueError:
        choices = "|".join(m.value for m in ConstraintMode)
        raise ParameterError(f"Unknown monotone method '{value}' (expected {choices})") from None


@dataclass(frozen=True)
class TreeConfig:
    """Growth limits for a single tree."""
    num_leaves: int = 32
    max_depth: int = 5
    min_data_in_leaf: int = 100
    reg_lambda: float = 0.0
    min_hessian: float = 1e-3

    def validate(self) -> None:
        if self.num_leaves < 1:
            raise ParameterError(f"num_leaves={self.num_leaves} must be >= 1")
        if self.max_depth < 1:
            raise ParameterError(f"max_depth={self.max_depth} must be >= 1")
        if self.min_data_in_leaf < 0:
            raise ParameterError(f"min_data_in_leaf={self.min_data_in_leaf} must be >= 0")
        if self.reg_lambda < 0:
            raise ParameterError(f"lambda={self.reg_lambda} must be >= 0")
        if self.min_hessian < 0:
            raise ParameterError(f"min_hessian={self.min_hessian} must be >= 0")


@dataclass(frozen=True)
class BoosterConfig:
    """Boosting parameters. Defaults are the experiment parameters plus LightGBM defaults."""
    objective: ObjectiveKind = ObjectiveKind.BINARY
    iterations: int = 100
    learning_rate: float = 0.1
    num_leaves: int = 32
    max_depth: int = 5
    min_data_in_leaf: int = 100
    reg_lambda: float = 0.0
    max_bins: int = 255
    monotone_method: ConstraintMode = ConstraintMode.BASIC
    monotone_penalty: float = 0.0
    penalty_epsilon: float = 1e-10
    min_hessian: float = 1e-3
    seed: int = 42
    monotone_constraints: Optional[tuple[int, ...]] = None  # overrides the dataset's directions

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveKind.parse(self.objective))
        object.__setattr__(self, "monotone_method", parse_mode(self.monotone_method))
        if self.monotone_constraints is not None:
            try:
                directions = tuple(int(d) for d in self.monotone_constraints)
            except (TypeError, ValueError):
                raise ParameterError(f"monotone_constraints must be integers, got {self.monotone_constraints!r}") from None
            object.__setattr__(self, "monotone_constraints", directions)

    def validate(self) -> "BoosterConfig":
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate={self.learning_rate} must be > 0")
        if self.iterations < 0:
            raise ParameterError(f"iterations={self.iterations} must be >= 0")
        if self.max_bins < 2:
            raise ParameterError(f"max_bins={self.max_bins} must be >= 2")
        if self.monotone_penalty < 0:
            raise ParameterError(f"monotone_penalty={self.monotone_penalty} must be >= 0")
        if self.penalty_epsilon <= 0:
            raise ParameterError(f"penalty epsilon={self.penalty_epsilon} must be > 0")
        if self.monotone_constraints is not None:
            bad = [d for d in self.monotone_constraints if d not in (-1, 0, 1)]
            if bad:
                raise ParameterError(f"monotone_constraints entries must be -1, 0 or 1, got {bad}")
        self.tree_config().validate()
        return self

    def tree_config(self) -> TreeConfig:
        return TreeConfig(
            num_leaves=self.num_leaves,
            max_depth=self.max_depth,
            min_data_in_leaf=self.min_data_in_leaf,
            reg_lambda=self.reg_lambda,
            min_hessian=self.min_hessian,
        )

    def with_changes(self, **changes: Any) -> "BoosterConfig":
        return replace(self, **changes).validate()

    def to_dict(self) -> dict:
        data = asdict(self)
        data["objective"] = self.objective.value
        data["monotone_method"] = self.monotone_method.value
        data["monotone_constraints"] = (
            list(self.monotone_constraints) if self.monotone_constraints is not None else None
        )
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "BoosterConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"Unknown booster config keys: {', '.join(unknown)}")
        return cls(**data).validate()


@dataclass(frozen=True)
class BenchmarkSettings:
    """Knobs of the experiment subcommands."""
    methods: tuple[ConstraintMode, ...] = (
        ConstraintMode.NONE, ConstraintMode.BASIC, ConstraintMode.FAST, ConstraintMode.SLOW,
    )
    gammas: tuple[float, ...] = (0.0,)
    trials: int = 5
    train_ratio: float = 0.65
    sizes: tuple[Optional[int], ...] = (2000, 10000, None)   # None = full dataset
    reps: int = 100
    checkpoints: tuple[int, ...] = (10, 25, 50, 100, 200, 300)
    first_k_trees: int = 2
    jobs: int = 1


@dataclass
class RunSpec:
    """One CLI invocation: subcommand, optional config file, flag overrides, output dir."""
    subcommand: str
    config_path: Optional[str] = None
    overrides: dict[str, Any] = field(default_factory=dict)
    output_dir: Optional[str] = None


@dataclass
class ResolvedRun:
    """A RunSpec after merging defaults < config file < flags."""
    booster: BoosterConfig
    bench: BenchmarkSettings
    data: Optional[str] = None
    schema: Optional[str] = None
    label: str = "income"
    model: Optional[str] = None
    output_dir: str = "./mono_output"
    download: bool = False
    explicit: frozenset[str] = frozenset()   # keys set by the config file or flags


# ── Settings ──

OUTPUT_DIR = os.environ.get("MONO_GBDT_OUTPUT_DIR", "./mono_output")
ADULT_DATA_DIR = os.environ.get("MONO_GBDT_ADULT_DIR", "./data/adult")
ADULT_BASE_URL = os.environ.get(
    "MONO_GBDT_ADULT_URL",
    "https://archive.ics.uci.edu/ml/machine-learning-databases/adult",
)

CONFIG_KEYS = {
    "data", "schema", "label", "model", "out", "download",
    "method", "methods", "monotone_method",
    "gamma", "gammas", "monotone_penalty", "epsilon",
    "monotone_constraints", "objective",
    "trials", "iterations", "learning_rate", "num_leaves", "max_depth",
    "min_data_in_leaf", "lambda", "max_bins", "min_hessian", "seed",
    "sizes", "reps", "checkpoints", "first_k_trees", "jobs", "train_ratio",
}


def load_config_file(path: str | Path) -> dict:
    """Read a JSON or YAML config file into a flat dict, rejecting unknown keys."""
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ParameterError(f"Config file {path} is not valid JSON/YAML: {e}") from e
    if not isinstance(data, dict):
        raise ParameterError(f"Config file {path} must hold a mapping of keys to values")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    _reject_unknown(data, source=str(path))
    return data


def _reject_unknown(data: dict, source: str) -> None:
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ParameterError(f"Unknown config key(s) in {source}: {', '.join(unknown)}")


def _as_list(value: Any) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [value]


def _as_float(value: Any, key: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{key} expects a number, got {value!r}") from None


def _as_int(value: Any, key: str) -> int:
    try:
        as_float = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{key} expects an integer, got {value!r}") from None
    if as_float != int(as_float):
        raise ParameterError(f"{key} expects an integer, got {value!r}")
    return int(as_float)


def _parse_size(value: Any) -> Optional[int]:
    if isinstance(value, str) and value.lower() in ("full", "all"):
        return None
    size = _as_int(value, "sizes")
    if size <= 0:
        raise ParameterError(f"sizes entries must be positive or 'full', got {value!r}")
    return size


def resolve_run(spec: RunSpec) -> ResolvedRun:
    """Merge defaults, the optional config file and flag overrides (flags win)."""
    merged: dict[str, Any] = {}
    if spec.config_path:
        merged.update(load_config_file(spec.config_path))
    overrides = {k.replace("-", "_"): v for k, v in spec.overrides.items() if v is not None}
    _reject_unknown(overrides, source="command-line flags")
    merged.update(overrides)
    if spec.output_dir:
        merged["out"] = spec.output_dir

    booster: dict[str, Any] = {}
    bench: dict[str, Any] = {}

    methods = _as_list(merged.get("methods") or merged.get("method") or merged.get("monotone_method"))
    if methods:
        bench["methods"] = tuple(parse_mode(m) for m in methods)
        booster["monotone_method"] = bench["methods"][0]

    gamma_key = next((k for k in ("gammas", "gamma", "monotone_penalty") if merged.get(k) is not None), None)
    if gamma_key is not None:
        # an explicit empty list stays empty; the sweep reports it
        bench["gammas"] = tuple(_as_float(g, "gamma") for g in _as_list(merged[gamma_key]))
        if any(g < 0 for g in bench["gammas"]):
            raise ParameterError(f"gamma values must be >= 0, got {list(bench['gammas'])}")
        if bench["gammas"]:
            booster["monotone_penalty"] = bench["gammas"][0]

    int_keys = {
        "iterations": "iterations", "num_leaves": "num_leaves", "max_depth": "max_depth",
        "min_data_in_leaf": "min_data_in_leaf", "max_bins": "max_bins", "seed": "seed",
    }
    for key, target in int_keys.items():
        if key in merged:
            booster[target] = _as_int(merged[key], key)
    float_keys = {
        "learning_rate": "learning_rate", "lambda": "reg_lambda",
        "epsilon": "penalty_epsilon", "min_hessian": "min_hessian",
    }
    for key, target in float_keys.items():
        if key in merged:
            booster[target] = _as_float(merged[key], key)
    if "objective" in merged:
        booster["objective"] = ObjectiveKind.parse(merged["objective"])
    if merged.get("monotone_constraints") is not None:
        booster["monotone_constraints"] = tuple(
            _as_int(d, "monotone_constraints") for d in _as_list(merged["monotone_constraints"])
        )

    if "trials" in merged:
        bench["trials"] = _as_int(merged["trials"], "trials")
    if "reps" in merged:
        bench["reps"] = _as_int(merged["reps"], "reps")
    if "jobs" in merged:
        bench["jobs"] = max(1, _as_int(merged["jobs"], "jobs"))
    if "first_k_trees" in merged:
        bench["first_k_trees"] = _as_int(merged["first_k_trees"], "first_k_trees")
    if "train_ratio" in merged:
        bench["train_ratio"] = _as_float(merged["train_ratio"], "train_ratio")
    if "sizes" in merged:
        bench["sizes"] = tuple(_parse_size(s) for s in _as_list(merged["sizes"]))
    if "checkpoints" in merged:
        bench["checkpoints"] = tuple(
            sorted({_as_int(c, "checkpoints") for c in _as_list(merged["checkpoints"])})
        )

    return ResolvedRun(
        booster=BoosterConfig(**booster).validate(),
        bench=BenchmarkSettings(**bench),
        data=merged.get("data"),
        schema=merged.get("schema"),
        label=merged.get("label", "income"),
        model=merged.get("model"),
        output_dir=str(merged.get("out") or OUTPUT_DIR),
        download=bool(merged.get("download", False)),
        explicit=frozenset(merged),
    )
