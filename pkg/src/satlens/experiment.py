"""Experiment configs, dataset construction and checkpoints shared by the CLI."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import BadBundle, ConfigError, SatlensError
from .nn.data import Dataset, load_idx_dataset, random_labels, synth_dataset
from .nn.model import Model, validate_architecture
from .nn.receptive import receptive_field
from .nn.train import TrainConfig, build_model, train
from .report import CHECKPOINT_SCHEMA, EXPERIMENT_SCHEMA, config_hash, read_json, write_json

SYNTH_KINDS = ("blobs", "rings", "glyph-images")
ANALYSIS_DEFAULTS = {
    "deltas": [0.9, 0.99, 0.999, 1.0],
    "policy": "at_least",
    "probe": False,
    "repeats": 3,
    "alpha": 0.01,
}


@dataclass
class ExperimentConfig:
    architecture: dict
    dataset: dict
    train: TrainConfig
    analysis: dict = field(default_factory=lambda: dict(ANALYSIS_DEFAULTS))
    output: str = "run"
    base_dir: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict:
        return {"schema": EXPERIMENT_SCHEMA, "architecture": self.architecture,
                "dataset": self.dataset, "train": self.train.to_dict(),
                "analysis": self.analysis, "output": self.output}

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, train=replace(self.train, seed=seed))

    def with_delta(self, delta: float) -> ExperimentConfig:
        return replace(self, train=replace(self.train, delta=delta))


def _load_json_file(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def experiment_from_dict(data: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    schema = data.get("schema", EXPERIMENT_SCHEMA)
    if schema != EXPERIMENT_SCHEMA:
        raise ConfigError(f"unsupported experiment schema {schema!r}")
    unknown = set(data) - {"schema", "architecture", "dataset", "train", "analysis", "output"}
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    arch = data.get("architecture")
    if isinstance(arch, str):
        arch = _load_json_file(base_dir / arch, "architecture config")
    if not isinstance(arch, dict):
        raise ConfigError("'architecture' must be an inline object or a path to one")
    validate_architecture(arch)
    dataset = data.get("dataset")
    if not isinstance(dataset, dict) or "kind" not in dataset:
        raise ConfigError("'dataset' must be an object with a 'kind'")
    if not isinstance(data.get("train", {}), dict):
        raise ConfigError("'train' must be an object")
    try:
        cfg = TrainConfig.from_dict(data.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    analysis = dict(ANALYSIS_DEFAULTS)
    extra = set(data.get("analysis", {})) - set(ANALYSIS_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown analysis keys: {sorted(extra)}")
    analysis.update(data.get("analysis", {}))
    for d in analysis["deltas"]:
        if not 0 < d <= 1:
            raise ConfigError(f"delta values must lie in (0, 1], got {d}")
    if int(analysis["repeats"]) < 1:
        raise ConfigError("analysis.repeats must be >= 1")
    return ExperimentConfig(arch, dataset, cfg, analysis, data.get("output", "run"), base_dir)


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    return experiment_from_dict(_load_json_file(path, "experiment config"), path.parent)


def build_dataset(spec: dict, base_dir: Path = Path(".")) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind")
    shuffle_labels = spec.pop("random_labels", None)
    try:
        if kind in SYNTH_KINDS:
            ds = synth_dataset(kind, **spec)
        elif kind == "idx":
            ds = load_idx_dataset(base_dir / spec.pop("images"), base_dir / spec.pop("labels"), **spec)
        else:
            raise ConfigError(f"unknown dataset kind {kind!r}")
    except TypeError as exc:
        raise ConfigError(f"bad dataset options: {exc}") from exc
    except KeyError as exc:
        raise ConfigError(f"dataset kind {kind!r} needs {exc}") from exc
    if shuffle_labels is not None:
        ds = random_labels(ds, int(shuffle_labels))
    return ds


def run_experiment(exp: ExperimentConfig, dataset: Dataset | None = None, callback=None):
    """Build and train the model described by ``exp``; returns (model, dataset, history)."""
    if dataset is None:
        dataset = build_dataset(exp.dataset, exp.base_dir)
    model = build_model(exp.architecture, dataset, exp.train)
    history = train(model, dataset, exp.train, callback)
    return model, dataset, history


def save_checkpoint(path, exp: ExperimentConfig, model: Model) -> None:
    write_json(path, {
        "schema": CHECKPOINT_SCHEMA,
        "config": exp.to_dict(),
        "config_hash": exp.hash,
        "base_dir": str(exp.base_dir.resolve()),
        "input_shape": list(model.input_shape),
        "state": model.state_dict(),
    })


def load_checkpoint(path) -> tuple[ExperimentConfig, Model, Dataset]:
    """Rebuild the experiment, model (with eigenspaces at the trained delta) and dataset."""
    data = read_json(path, CHECKPOINT_SCHEMA)
    try:
        exp = experiment_from_dict(copy.deepcopy(data["config"]), Path(data.get("base_dir", ".")))
        if exp.hash != data["config_hash"]:
            raise BadBundle(f"{path}: config hash does not match its config")
        model = Model(exp.architecture, data["input_shape"], seed=exp.train.seed,
                      downsample_cap=exp.train.downsample_cap)
        model.load_state_dict(data["state"])
    except SatlensError as exc:
        if isinstance(exc, BadBundle):
            raise
        raise BadBundle(f"{path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise BadBundle(f"{path}: malformed checkpoint ({exc!r})") from exc
    if any(p.eigh is None for p in model.points):
        raise BadBundle(f"{path}: checkpoint lacks covariance statistics")
    model.select_eigenspaces(exp.train.delta, exp.train.policy)
    dataset = build_dataset(exp.dataset, exp.base_dir)
    if tuple(dataset.input_shape) != tuple(model.input_shape):
        raise BadBundle(f"{path}: dataset shape {dataset.input_shape} does not match the model")
    return exp, model, dataset


def point_receptive_fields(model: Model) -> list[int | None]:
    """Receptive field of the layer feeding each analysis point (None for dense points)."""
    sizes = {e.name: e.size for e in receptive_field(model).layers}
    return [sizes.get(p.name) if p.conv else None for p in model.points]


def marker_index(model: Model) -> int | None:
    """First analysis point whose receptive field exceeds the input side."""
    if len(model.input_shape) != 3:
        return None
    side = max(model.input_shape[1:])
    for i, rf in enumerate(point_receptive_fields(model)):
        if rf is not None and rf > side:
            return i
    return None
