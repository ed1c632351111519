"""Experiment configuration: schema, JSON parsing, and materialization.

A config file is a single JSON object; every field has a documented
default except the dataset source. Command-line flags override file
values. ``prepare`` turns a validated config into the concrete objects a
run needs (datasets with features applied, model spec, resolved noise),
so sweeps can materialize once and reuse across settings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream
from .data import Dataset, FeatureSpec, apply_features, load_idx, synth_blobs
from .errors import ConfigError
from .models import Activation, ModelSpec
from .privacy import AccountantConfig, NoiseSpec, PrivacyBudget, achieved_epsilon, calibrate_sigma

__all__ = [
    "SyntheticData",
    "IdxData",
    "FeatureConfig",
    "ModelConfig",
    "ScheduleConfig",
    "PrivacyConfig",
    "OptimizerConfig",
    "ExperimentConfig",
    "Prepared",
    "parse_config",
    "load_config",
    "prepare",
]


@dataclass(frozen=True)
class SyntheticData:
    classes: int = 2
    dim: int = 20
    n_per_class: int = 2000
    test_n_per_class: int = 500
    separation: float = 3.0


@dataclass(frozen=True)
class IdxData:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class FeatureConfig:
    kind: str = "identity"
    mean: tuple[float, ...] | None = None  # normalize; None -> fit on train
    std: tuple[float, ...] | None = None
    out_dim: int | None = None  # random_projection
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "linear"  # "linear" | "mlp"
    hidden_dim: int | None = None
    activation: str = "relu"  # "relu" | "tempered_sigmoid"
    scale: float = 2.0
    temp: float = 2.0
    offset: float = 1.0


@dataclass(frozen=True)
class ScheduleConfig:
    """Either (epochs, rounds), an explicit per-round list, or just a total.

    A bare total_epochs is enough for sweep commands, which choose their
    own (E, R) splits; single runs need a concrete shape.
    """

    epochs: int | None = None
    rounds: int | None = None
    local_epochs: tuple[int, ...] | None = None
    total_epochs: int | None = None

    def total(self) -> int:
        if self.local_epochs is not None:
            return int(sum(self.local_epochs))
        if self.epochs is not None and self.rounds is not None:
            return self.epochs * self.rounds
        if self.total_epochs is not None:
            return self.total_epochs
        raise ConfigError("cannot determine total epochs", field="schedule")


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon: float | None = None
    sigma: float | None = None
    delta: float = 1e-5
    kappa: float = 2.0
    clip: float = 1.0
    q: float | None = None  # None -> batch_size / shard_size


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.3
    momentum: float = 0.5
    batch_size: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SyntheticData | IdxData = field(default_factory=SyntheticData)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    clients: int = 10
    fraction: float = 0.1
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    runs: int = 10
    master_seed: int = 0
    output: str | None = None


@dataclass(frozen=True)
class Prepared:
    """Materialized experiment inputs, reusable across runs and settings."""

    train: Dataset
    test: Dataset
    model_spec: ModelSpec
    noise: NoiseSpec
    epsilon: float  # achieved/target epsilon; inf when sigma == 0
    budget: PrivacyBudget | None
    accountant: AccountantConfig | None
    q: float
    shard_size: int


def _require(raw: dict, allowed: set[str], where: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", field=where)


def _num(raw, key, where, default=None, required=False):
    if key not in raw or raw[key] is None:
        if required:
            raise ConfigError("missing required value", field=f"{where}.{key}")
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=f"{where}.{key}")
    return value


def _int(raw, key, where, default=None, required=False):
    value = _num(raw, key, where, default, required)
    if value is None:
        return None
    if value != int(value):
        raise ConfigError(f"expected an integer, got {value!r}", field=f"{where}.{key}")
    return int(value)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a raw JSON object into an ExperimentConfig.

    Relative dataset paths are resolved against ``base_dir`` (normally the
    config file's directory). Raises ConfigError with a field path on any
    problem.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _require(
        raw,
        {"dataset", "features", "model", "clients", "fraction", "schedule",
         "privacy", "optimizer", "runs", "master_seed", "output"},
        "config",
    )

    dataset = _parse_dataset(raw.get("dataset", {}), base_dir)
    features = _parse_features(raw.get("features", {}))
    model = _parse_model(raw.get("model", {}))
    schedule = _parse_schedule(raw.get("schedule", {}))
    privacy = _parse_privacy(raw.get("privacy", {}))
    optimizer = _parse_optimizer(raw.get("optimizer", {}))

    clients = _int(raw, "clients", "config", default=10)
    if clients < 1:
        raise ConfigError("must be >= 1", field="clients")
    fraction = _num(raw, "fraction", "config", default=0.1)
    if not 0 < fraction <= 1:
        raise ConfigError(f"must be in (0, 1], got {fraction}", field="fraction")
    runs = _int(raw, "runs", "config", default=10)
    if runs < 1:
        raise ConfigError("must be >= 1", field="runs")
    master_seed = _int(raw, "master_seed", "config", default=0)
    if not 0 <= master_seed < 2**64:
        raise ConfigError("must fit in an unsigned 64-bit integer", field="master_seed")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("must be a path string", field="output")

    return ExperimentConfig(
        dataset=dataset,
        features=features,
        model=model,
        clients=clients,
        fraction=fraction,
        schedule=schedule,
        privacy=privacy,
        optimizer=optimizer,
        runs=runs,
        master_seed=master_seed,
        output=output,
    )


def _parse_dataset(raw: dict, base_dir: Path | None):
    if not isinstance(raw, dict):
        raise ConfigError("must be an object", field="dataset")
    kind = raw.get("kind", "synthetic")
    if kind == "synthetic":
        _require(
            raw,
            {"kind", "classes", "dim", "n_per_class", "test_n_per_class", "separation"},
            "dataset",
        )
        cfg = SyntheticData(
            classes=_int(raw, "classes", "dataset", default=2),
            dim=_int(raw, "dim", "dataset", default=20),
            n_per_class=_int(raw, "n_per_class", "dataset", default=2000),
            test_n_per_class=_int(raw, "test_n_per_class", "dataset", default=500),
            separation=float(_num(raw, "separation", "dataset", default=3.0)),
        )
        if cfg.classes < 2:
            raise ConfigError("must be >= 2", field="dataset.classes")
        if cfg.dim < 1 or cfg.n_per_class < 1 or cfg.test_n_per_class < 1:
            raise ConfigError("dim and sample counts must be >= 1", field="dataset")
        return cfg
    if kind == "idx":
        _require(
            raw,
            {"kind", "train_images", "train_labels", "test_images", "test_labels"},
            "dataset",
        )
        paths = {}
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            value = raw.get(key)
            if not isinstance(value, str):
                raise ConfigError("missing required path", field=f"dataset.{key}")
            path = Path(value)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            paths[key] = str(path)
        return IdxData(**paths)
    raise ConfigError(f"must be 'synthetic' or 'idx', got {kind!r}", field="dataset.kind")


def _parse_features(raw: dict) -> FeatureConfig:
    if not isinstance(raw, dict):
        raise ConfigError("must be an object", field="features")
    _require(raw, {"kind", "mean", "std", "out_dim", "seed"}, "features")
    kind = raw.get("kind", "identity")
    if kind not in ("identity", "normalize", "random_projection"):
        raise ConfigError(f"unknown kind {kind!r}", field="features.kind")
    mean = raw.get("mean")
    std = raw.get("std")
    if (mean is None) != (std is None):
        raise ConfigError("mean and std must be given together", field="features")
    if mean is not None:
        mean = tuple(float(v) for v in mean)
        std = tuple(float(v) for v in std)
        if any(s <= 0 for s in std):
            raise ConfigError("std entries must be > 0", field="features.std")
    out_dim = _int(raw, "out_dim", "features")
    if kind == "random_projection" and (out_dim is None or out_dim < 1):
        raise ConfigError("random_projection needs out_dim >= 1", field="features.out_dim")
    return FeatureConfig(
        kind=kind, mean=mean, std=std, out_dim=out_dim,
        seed=_int(raw, "seed", "features", default=0),
    )


def _parse_model(raw: dict) -> ModelConfig:
    if not isinstance(raw, dict):
        raise ConfigError("must be an object", field="model")
    _require(raw, {"arch", "hidden_dim", "activation", "scale", "temp", "offset"}, "model")
    arch = raw.get("arch", "linear")
    if arch not in ("linear", "mlp"):
        raise ConfigError(f"must be 'linear' or 'mlp', got {arch!r}", field="model.arch")
    hidden_dim = _int(raw, "hidden_dim", "model")
    if arch == "mlp" and (hidden_dim is None or hidden_dim < 1):
        raise ConfigError("mlp needs hidden_dim >= 1", field="model.hidden_dim")
    activation = raw.get("activation", "relu")
    if activation not in ("relu", "tempered_sigmoid"):
        raise ConfigError(f"unknown activation {activation!r}", field="model.activation")
    return ModelConfig(
        arch=arch,
        hidden_dim=hidden_dim,
        activation=activation,
        scale=float(_num(raw, "scale", "model", default=2.0)),
        temp=float(_num(raw, "temp", "model", default=2.0)),
        offset=float(_num(raw, "offset", "model", default=1.0)),
    )


def _parse_schedule(raw: dict) -> ScheduleConfig:
    if not isinstance(raw, dict):
        raise ConfigError("must be an object", field="schedule")
    _require(raw, {"epochs", "rounds", "local_epochs", "total_epochs"}, "schedule")
    epochs = _int(raw, "epochs", "schedule")
    rounds = _int(raw, "rounds", "schedule")
    total = _int(raw, "total_epochs", "schedule")
    local = raw.get("local_epochs")
    if local is not None:
        if not isinstance(local, list) or not local:
            raise ConfigError("must be a nonempty list", field="schedule.local_epochs")
        local = tuple(int(e) for e in local)
        if any(e < 1 for e in local):
            raise ConfigError("entries must be >= 1", field="schedule.local_epochs")
        if epochs is not None or rounds is not None:
            raise ConfigError(
                "give either local_epochs or (epochs, rounds), not both", field="schedule"
            )
    if (epochs is None) != (rounds is None):
        raise ConfigError("epochs and rounds must be given together", field="schedule")
    if epochs is not None and (epochs < 1 or rounds < 1):
        raise ConfigError("epochs and rounds must be >= 1", field="schedule")
    cfg = ScheduleConfig(epochs=epochs, rounds=rounds, local_epochs=local, total_epochs=total)
    if total is not None:
        if total < 1:
            raise ConfigError("must be >= 1", field="schedule.total_epochs")
        derived = None
        if local is not None:
            derived = sum(local)
        elif epochs is not None:
            derived = epochs * rounds
        if derived is not None and derived != total:
            raise ConfigError(
                f"total_epochs = {total} but the schedule sums to {derived}",
                field="schedule.total_epochs",
            )
    elif epochs is None and local is None:
        raise ConfigError(
            "need (epochs, rounds), local_epochs, or total_epochs", field="schedule"
        )
    return cfg


def _parse_privacy(raw: dict) -> PrivacyConfig:
    if not isinstance(raw, dict):
        raise ConfigError("must be an object", field="privacy")
    _require(raw, {"epsilon", "sigma", "delta", "kappa", "clip", "q"}, "privacy")
    epsilon = _num(raw, "epsilon", "privacy")
    sigma = _num(raw, "sigma", "privacy")
    if (epsilon is None) == (sigma is None):
        raise ConfigError(
            "exactly one of epsilon (sigma is calibrated) or sigma (epsilon is "
            "reported) must be set",
            field="privacy",
        )
    if epsilon is not None and epsilon <= 0:
        raise ConfigError(f"must be > 0, got {epsilon}", field="privacy.epsilon")
    if sigma is not None and sigma < 0:
        raise ConfigError(f"must be >= 0, got {sigma}", field="privacy.sigma")
    cfg = PrivacyConfig(
        epsilon=epsilon,
        sigma=sigma,
        delta=float(_num(raw, "delta", "privacy", default=1e-5)),
        kappa=float(_num(raw, "kappa", "privacy", default=2.0)),
        clip=float(_num(raw, "clip", "privacy", default=1.0)),
        q=_num(raw, "q", "privacy"),
    )
    if not 0 < cfg.delta < 1:
        raise ConfigError(f"must be in (0, 1), got {cfg.delta}", field="privacy.delta")
    if cfg.kappa <= 0:
        raise ConfigError(f"must be > 0, got {cfg.kappa}", field="privacy.kappa")
    if cfg.clip <= 0:
        raise ConfigError(f"must be > 0, got {cfg.clip}", field="privacy.clip")
    if cfg.q is not None and not 0 < cfg.q <= 1:
        raise ConfigError(f"must be in (0, 1], got {cfg.q}", field="privacy.q")
    return cfg


def _parse_optimizer(raw: dict) -> OptimizerConfig:
    if not isinstance(raw, dict):
        raise ConfigError("must be an object", field="optimizer")
    _require(raw, {"lr", "momentum", "batch_size"}, "optimizer")
    cfg = OptimizerConfig(
        lr=float(_num(raw, "lr", "optimizer", default=0.3)),
        momentum=float(_num(raw, "momentum", "optimizer", default=0.5)),
        batch_size=_int(raw, "batch_size", "optimizer", default=32),
    )
    if cfg.lr <= 0:
        raise ConfigError(f"must be > 0, got {cfg.lr}", field="optimizer.lr")
    if cfg.momentum < 0:
        raise ConfigError(f"must be >= 0, got {cfg.momentum}", field="optimizer.momentum")
    if cfg.batch_size < 1:
        raise ConfigError(f"must be >= 1, got {cfg.batch_size}", field="optimizer.batch_size")
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="config")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", field="config")
    return parse_config(raw, base_dir=path.parent)


def materialize_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Load or generate the (train, test) pair with features applied.

    Synthetic data derives from the master seed alone, so every run and
    sweep setting under one config sees the same corpus.
    """
    ds = config.dataset
    if isinstance(ds, SyntheticData):
        data_stream = RngStream(config.master_seed).child("data")
        train = synth_blobs(ds.classes, ds.dim, ds.n_per_class, ds.separation,
                            data_stream.child("train"))
        test = synth_blobs(ds.classes, ds.dim, ds.test_n_per_class, ds.separation,
                           data_stream.child("test"))
    else:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not Path(getattr(ds, key)).exists():
                raise ConfigError(
                    f"dataset file not found: {getattr(ds, key)}", field=f"dataset.{key}"
                )
        train = load_idx(ds.train_images, ds.train_labels)
        test = load_idx(ds.test_images, ds.test_labels)
        classes = max(train.num_classes, test.num_classes)
        train = Dataset(train.features, train.labels, classes)
        test = Dataset(test.features, test.labels, classes)

    spec = _feature_spec(config.features, train)
    return apply_features(train, spec), apply_features(test, spec)


def _feature_spec(cfg: FeatureConfig, train: Dataset) -> FeatureSpec:
    if cfg.kind == "identity":
        return FeatureSpec()
    if cfg.kind == "normalize":
        if cfg.mean is not None:
            mean = np.asarray(cfg.mean, dtype=float)
            std = np.asarray(cfg.std, dtype=float)
        else:
            mean = train.features.mean(axis=0)
            # Constant coordinates get a unit divisor instead of zero.
            std = train.features.std(axis=0)
            std[std < 1e-8] = 1.0
        return FeatureSpec(kind="normalize", mean=mean, std=std)
    return FeatureSpec(kind="random_projection", out_dim=cfg.out_dim, seed=cfg.seed)


def prepare(config: ExperimentConfig) -> Prepared:
    """Materialize datasets and resolve the noise multiplier for a config."""
    train, test = materialize_data(config)
    shard_size = int(config.fraction * train.n)
    if shard_size < 1:
        raise ConfigError(
            f"fraction {config.fraction} of {train.n} samples leaves an empty shard",
            field="fraction",
        )
    if config.optimizer.batch_size > shard_size:
        raise ConfigError(
            f"batch_size {config.optimizer.batch_size} exceeds the per-client "
            f"shard size {shard_size}",
            field="optimizer.batch_size",
        )

    model_cfg = config.model
    activation = Activation(
        kind=model_cfg.activation,
        scale=model_cfg.scale,
        temp=model_cfg.temp,
        offset=model_cfg.offset,
    )
    model_spec = ModelSpec(
        input_dim=train.dim,
        num_classes=train.num_classes,
        hidden_dim=model_cfg.hidden_dim if model_cfg.arch == "mlp" else None,
        activation=activation,
    )

    priv = config.privacy
    total_epochs = config.schedule.total()
    q = priv.q if priv.q is not None else config.optimizer.batch_size / shard_size
    accountant = AccountantConfig(kappa=priv.kappa, q=q, total_epochs=total_epochs)
    if priv.epsilon is not None:
        budget = PrivacyBudget(priv.epsilon, priv.delta)
        sigma = calibrate_sigma(budget, accountant)
        epsilon = priv.epsilon
    else:
        sigma = priv.sigma
        epsilon = achieved_epsilon(sigma, priv.delta, accountant)
        budget = PrivacyBudget(epsilon, priv.delta) if math.isfinite(epsilon) else None

    return Prepared(
        train=train,
        test=test,
        model_spec=model_spec,
        noise=NoiseSpec(clip=priv.clip, sigma=sigma),
        epsilon=epsilon,
        budget=budget,
        accountant=accountant,
        q=q,
        shard_size=shard_size,
    )
