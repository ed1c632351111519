"""CSV and JSON report writers.

One fixed column set serves every command, so downstream tooling can
concatenate outputs; cells that do not apply to a row stay empty. The
wall_time_s column is always last and is the only column excluded from
the determinism guarantee. Non-finite floats are serialized as the string
"inf" so the JSON summaries stay strictly valid.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .analysis import SweepResult
from .config import ExperimentConfig, Prepared, SyntheticData
from .federation import PflResult

__all__ = [
    "CSV_COLUMNS",
    "fmt_cell",
    "config_echo",
    "train_rows",
    "sweep_rows",
    "write_csv",
    "write_summary",
    "summary_path",
]

CSV_COLUMNS = [
    "command",
    "setting",
    "run",
    "round",
    "method",
    "dataset",
    "features",
    "model",
    "clients",
    "fraction",
    "epochs",
    "rounds",
    "total_epochs",
    "privacy_mode",
    "epsilon",
    "delta",
    "kappa",
    "clip",
    "sigma",
    "q",
    "lr",
    "momentum",
    "batch_size",
    "runs",
    "master_seed",
    "accuracy",
    "mean_loss",
    "std_accuracy",
    "epsilon_spent",
    "utility_bound",
    "checksum",
    "shard_overlap",
    "wall_time_s",
]


def _dataset_label(config: ExperimentConfig) -> str:
    ds = config.dataset
    if isinstance(ds, SyntheticData):
        return (
            f"synthetic(classes={ds.classes},dim={ds.dim},n_per_class={ds.n_per_class},"
            f"test_n_per_class={ds.test_n_per_class},separation={ds.separation})"
        )
    return f"idx(train_images={ds.train_images})"


def _features_label(config: ExperimentConfig) -> str:
    f = config.features
    if f.kind == "random_projection":
        return f"random_projection(out_dim={f.out_dim},seed={f.seed})"
    return f.kind


def _model_label(config: ExperimentConfig) -> str:
    m = config.model
    if m.arch == "mlp":
        return f"mlp(hidden_dim={m.hidden_dim},activation={m.activation})"
    return "linear"


def fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def config_echo(config: ExperimentConfig, prepared: Prepared | None = None) -> dict:
    """Flat config fields shared by every row of a report."""
    sched = config.schedule
    row = {
        "dataset": _dataset_label(config),
        "features": _features_label(config),
        "model": _model_label(config),
        "clients": config.clients,
        "fraction": config.fraction,
        "epochs": sched.epochs,
        "rounds": sched.rounds,
        "total_epochs": sched.total(),
        "privacy_mode": "epsilon" if config.privacy.epsilon is not None else "sigma",
        "delta": config.privacy.delta,
        "kappa": config.privacy.kappa,
        "clip": config.privacy.clip,
        "lr": config.optimizer.lr,
        "momentum": config.optimizer.momentum,
        "batch_size": config.optimizer.batch_size,
        "runs": config.runs,
        "master_seed": config.master_seed,
    }
    if prepared is not None:
        row["epsilon"] = prepared.epsilon
        row["sigma"] = prepared.noise.sigma
        row["q"] = prepared.q
    else:
        row["epsilon"] = config.privacy.epsilon
        row["sigma"] = config.privacy.sigma
        row["q"] = config.privacy.q
    return row


def _eps_array(values) -> str:
    return json.dumps(["inf" if math.isinf(v) else v for v in values], separators=(",", ":"))


def train_rows(
    config: ExperimentConfig,
    prepared: Prepared,
    result: PflResult,
    wall_time: float,
) -> list[dict]:
    """Per-round rows plus a final summary row for a single training."""
    echo = config_echo(config, prepared)
    rows = []
    for rec in result.records:
        rows.append(
            {
                **echo,
                "command": "train",
                "run": 0,
                "round": rec.round,
                "method": "fedavg" if prepared.noise.sigma == 0 else "pfl",
                "accuracy": rec.eval.accuracy,
                "mean_loss": rec.eval.mean_loss,
                "epsilon_spent": rec.epsilon_spent,
                "checksum": rec.checksum,
                "shard_overlap": result.shard_overlap,
            }
        )
    last = result.records[-1]
    rows.append(
        {
            **echo,
            "command": "train",
            "run": 0,
            "round": "final",
            "method": "fedavg" if prepared.noise.sigma == 0 else "pfl",
            "accuracy": last.eval.accuracy,
            "mean_loss": last.eval.mean_loss,
            "epsilon_spent": _eps_array([rec.epsilon_spent for rec in result.records]),
            "checksum": last.checksum,
            "shard_overlap": result.shard_overlap,
            "wall_time_s": wall_time,
        }
    )
    return rows


def sweep_rows(command: str, sweep: SweepResult) -> list[dict]:
    """One row per (setting, run) plus a summary row per setting."""
    echo = config_echo(sweep.config)
    rows = []
    for srow in sweep.rows:
        base = {
            **echo,
            "command": command,
            "setting": srow.key,
            "method": srow.method,
            "epochs": srow.epochs,
            "rounds": srow.rounds,
            "clients": srow.clients,
            "epsilon": srow.epsilon,
            "total_epochs": sweep.total_epochs,
        }
        for j, acc in enumerate(srow.accuracies):
            rows.append(
                {
                    **base,
                    "run": j,
                    "accuracy": acc,
                    "mean_loss": srow.losses[j],
                    "epsilon_spent": _eps_array(srow.epsilon_per_round),
                    "wall_time_s": srow.wall_times[j] if j < len(srow.wall_times) else None,
                }
            )
        rows.append(
            {
                **base,
                "run": "mean",
                "accuracy": srow.mean_accuracy,
                "std_accuracy": srow.std_accuracy,
                "mean_loss": srow.mean_loss,
                "epsilon_spent": _eps_array(srow.epsilon_per_round),
                "utility_bound": srow.utility_bound,
            }
        )
    return rows


def write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([fmt_cell(row.get(col)) for col in CSV_COLUMNS])


def summary_path(out_path) -> Path:
    out = Path(out_path)
    stem = out.name[: -len(out.suffix)] if out.suffix == ".csv" else out.name
    return out.with_name(stem + ".summary.json")


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_summary(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_jsonable(payload), f, indent=2, allow_nan=False)
        f.write("\n")
