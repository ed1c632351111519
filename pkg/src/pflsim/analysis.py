"""Theoretical quantities and the two experiment sweeps.

Covers three pieces of apparatus:

* the degradation bound comparing noisy clipped training against a plain
  SGD twin that shares initialization and minibatch order, together with
  a paired empirical measurement of that degradation;
* the client-count utility lower bound
  1 - param_std^2 * lipschitz^2 / (level^2 * clients);
* sweep drivers that run the federated protocol across (E, R) splits of a
  fixed epoch budget, or across client counts, and aggregate accuracy.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig, Prepared, ScheduleConfig, prepare
from .core import RngStream, expected_gaussian_norm
from .data import Dataset
from .errors import ConfigError
from .federation import Schedule, run_pfl
from .models import ModelSpec, evaluate, init_params, param_count
from .privacy import NoiseSpec, _dp_sgd_step_arrays

__all__ = [
    "DegradationConfig",
    "DegradationReport",
    "UtilityBound",
    "SweepRow",
    "SweepResult",
    "degradation_upper_bound",
    "paired_degradation",
    "utility_lower_bound",
    "factor_pairs",
    "sweep_epochs",
    "sweep_clients",
]


def degradation_upper_bound(
    lipschitz: float,
    epochs: int,
    lr: float,
    clip: float,
    lr_ref: float,
    clip_ref: float,
    sigma: float,
    batch_size: int,
    dim: int,
) -> float:
    """Upper bound on the loss gap between noisy-clipped and plain training.

    Evaluates

        lipschitz * epochs * (lr*clip + lr_ref*clip_ref
                              + lr * E||eta|| / batch_size)

    where E||eta|| is the mean norm of the per-step Gaussian noise in
    ``dim`` dimensions. Linear in epochs, hence minimized at epochs = 1
    for any positive inputs.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if min(lipschitz, lr, clip, lr_ref, clip_ref, sigma) < 0:
        raise ValueError("bound inputs must be nonnegative")
    if batch_size < 1 or dim < 1:
        raise ValueError("batch_size and dim must be >= 1")
    noise_term = lr * expected_gaussian_norm(dim, sigma, clip) / batch_size
    return lipschitz * epochs * (lr * clip + lr_ref * clip_ref + noise_term)


@dataclass(frozen=True)
class UtilityBound:
    """Probability lower bound that the averaged model's expected risk gap
    stays below ``level``."""

    level: float
    clients: int
    param_std: float
    lipschitz: float
    bound: float


def utility_lower_bound(
    param_std: float, lipschitz: float, level: float, clients: int
) -> UtilityBound:
    """Chebyshev-style utility floor 1 - param_std^2 lipschitz^2 / (level^2 k),
    clamped to [0, 1]."""
    if not 0 < level <= 1:
        raise ValueError(f"level must be in (0, 1], got {level}")
    if clients < 1:
        raise ValueError(f"clients must be >= 1, got {clients}")
    if param_std < 0 or lipschitz <= 0:
        raise ValueError("param_std must be >= 0 and lipschitz > 0")
    failure = param_std**2 * lipschitz**2 / (level**2 * clients)
    return UtilityBound(
        level=level,
        clients=clients,
        param_std=param_std,
        lipschitz=lipschitz,
        bound=min(1.0, max(0.0, 1.0 - failure)),
    )


@dataclass(frozen=True)
class DegradationConfig:
    """Inputs for the paired noisy-vs-plain training comparison.

    Both methods start from the same initialization and see the same
    minibatch in each epoch (one sampled batch per epoch, matching the
    step-accumulation model behind the bound). ``clip_ref`` None means the
    reference run is truly unclipped and the bound uses the largest
    gradient norm observed in it. ``lipschitz`` None likewise falls back
    to the empirical max gradient norm across both methods.
    """

    shard: Dataset
    model: ModelSpec
    epochs: int
    lr: float
    clip: float
    sigma: float
    batch_size: int
    seed: int
    lr_ref: float | None = None  # defaults to lr
    clip_ref: float | None = None
    lipschitz: float | None = None


@dataclass(frozen=True)
class DegradationReport:
    measured: float
    bound: float
    inputs: dict
    bound_satisfied: bool


def paired_degradation(cfg: DegradationConfig, runs: int) -> DegradationReport:
    """Measure the loss gap between noisy-clipped and plain trajectories.

    Trains the plain reference once, then the noisy method ``runs`` times
    with fresh noise draws but identical minibatches, and averages
    |mean_loss(noisy) - mean_loss(plain)| over the draws. The reported
    bound uses the same step sizes and, where not given, empirical
    estimates for the Lipschitz constant and the reference clip level.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if cfg.epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size > cfg.shard.n:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds shard size {cfg.shard.n}",
            field="batch_size",
        )
    lr_ref = cfg.lr if cfg.lr_ref is None else cfg.lr_ref

    stream = RngStream(cfg.seed).child("degradation")
    theta0 = init_params(cfg.model, stream.child("init"))
    n = cfg.shard.n
    # One minibatch per epoch, shared by every trajectory.
    batches = [
        stream.child("sample", t).generator().choice(n, size=cfg.batch_size, replace=False)
        for t in range(cfg.epochs)
    ]

    def train(noise: NoiseSpec, lr: float, noise_stream: RngStream) -> tuple[np.ndarray, float]:
        params = theta0.copy()
        velocity = np.zeros_like(params)
        max_norm = 0.0
        for t, idx in enumerate(batches):
            params, velocity, norms = _dp_sgd_step_arrays(
                cfg.model, params,
                cfg.shard.features[idx], cfg.shard.labels[idx],
                noise, lr, 0.0, velocity, noise_stream.child("step", t),
            )
            max_norm = max(max_norm, float(norms.max()))
        return params, max_norm

    ref_noise = NoiseSpec(clip=cfg.clip_ref if cfg.clip_ref is not None else math.inf, sigma=0.0)
    ref_params, ref_max_norm = train(ref_noise, lr_ref, stream.child("ref-noise"))
    ref_loss = evaluate(cfg.model, ref_params, cfg.shard).mean_loss

    dp_noise = NoiseSpec(clip=cfg.clip, sigma=cfg.sigma)
    gaps = []
    max_norm_seen = ref_max_norm
    for j in range(runs):
        dp_params, dp_max_norm = train(dp_noise, cfg.lr, stream.child("dp-noise", j))
        max_norm_seen = max(max_norm_seen, dp_max_norm)
        dp_loss = evaluate(cfg.model, dp_params, cfg.shard).mean_loss
        gaps.append(abs(dp_loss - ref_loss))
    measured = float(np.mean(gaps))

    lipschitz = cfg.lipschitz if cfg.lipschitz is not None else max_norm_seen
    clip_ref = cfg.clip_ref if cfg.clip_ref is not None else ref_max_norm
    bound = degradation_upper_bound(
        lipschitz, cfg.epochs, cfg.lr, cfg.clip, lr_ref, clip_ref,
        cfg.sigma, cfg.batch_size, param_count(cfg.model),
    )
    return DegradationReport(
        measured=measured,
        bound=bound,
        inputs={
            "lipschitz": lipschitz,
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "lr_ref": lr_ref,
            "clip": cfg.clip,
            "clip_ref": clip_ref,
            "sigma": cfg.sigma,
            "batch_size": cfg.batch_size,
            "dim": param_count(cfg.model),
            "runs": runs,
            "lipschitz_estimated": cfg.lipschitz is None,
            "clip_ref_estimated": cfg.clip_ref is None,
        },
        bound_satisfied=measured <= bound,
    )


@dataclass(frozen=True)
class SweepRow:
    """Aggregated result for one sweep setting."""

    key: str
    method: str
    epochs: int | None
    rounds: int | None
    clients: int | None
    epsilon: float
    mean_accuracy: float
    std_accuracy: float
    mean_loss: float
    accuracies: tuple[float, ...]
    losses: tuple[float, ...]
    epsilon_per_round: tuple[float, ...]
    utility_bound: float | None = None
    wall_times: tuple[float, ...] = ()


@dataclass(frozen=True)
class SweepResult:
    total_epochs: int | None
    rows: tuple[SweepRow, ...]
    config: ExperimentConfig


def factor_pairs(total: int) -> list[tuple[int, int]]:
    """All (epochs, rounds) splits with epochs * rounds == total."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    return [(e, total // e) for e in range(1, total + 1) if total % e == 0]


def _method_label(prepared: Prepared) -> str:
    return "fedavg" if prepared.noise.sigma == 0 else "pfl"


def _std(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def _run_setting(
    config: ExperimentConfig,
    prepared: Prepared,
    schedule: Schedule,
    runs: int,
    threads: int,
) -> tuple[list[float], list[float], tuple[float, ...], list[float]]:
    accs, losses, wall = [], [], []
    eps_per_round: tuple[float, ...] = ()
    for run_index in range(runs):
        t0 = time.perf_counter()
        result = run_pfl(config, run_index=run_index, prepared=prepared,
                         schedule=schedule, threads=threads)
        wall.append(time.perf_counter() - t0)
        accs.append(result.records[-1].eval.accuracy)
        losses.append(result.records[-1].eval.mean_loss)
        eps_per_round = tuple(rec.epsilon_spent for rec in result.records)
    return accs, losses, eps_per_round, wall


def sweep_epochs(
    base_config: ExperimentConfig,
    pairs: list[tuple[int, int]] | None = None,
    runs: int | None = None,
    threads: int = 1,
) -> SweepResult:
    """Run the protocol for every (E, R) split of a fixed epoch budget.

    The noise multiplier is calibrated once from the budget's total epoch
    count and held fixed across splits, so every setting trains under the
    same per-step noise. Accuracy is averaged over ``runs`` repetitions.
    """
    total = base_config.schedule.total()
    if pairs is None:
        pairs = factor_pairs(total)
    for e, r in pairs:
        if e < 1 or r < 1 or e * r != total:
            raise ConfigError(
                f"(E, R) = ({e}, {r}) does not multiply to the epoch budget {total}",
                field="schedule",
            )
    runs = base_config.runs if runs is None else runs
    prepared = prepare(base_config)

    rows = []
    for e, r in sorted(pairs):
        schedule = Schedule.uniform(e, r)
        cfg = replace(base_config, schedule=ScheduleConfig(epochs=e, rounds=r, total_epochs=total))
        accs, losses, eps_rounds, wall = _run_setting(cfg, prepared, schedule, runs, threads)
        rows.append(
            SweepRow(
                key=f"E={e},R={r}",
                method=_method_label(prepared),
                epochs=e,
                rounds=r,
                clients=base_config.clients,
                epsilon=prepared.epsilon,
                mean_accuracy=float(np.mean(accs)),
                std_accuracy=_std(accs),
                mean_loss=float(np.mean(losses)),
                accuracies=tuple(accs),
                losses=tuple(losses),
                epsilon_per_round=eps_rounds,
                wall_times=tuple(wall),
            )
        )
    return SweepResult(total_epochs=total, rows=tuple(rows), config=base_config)


def sweep_clients(
    base_config: ExperimentConfig,
    ks: list[int] | None = None,
    runs: int | None = None,
    threads: int = 1,
    utility_level: float = 0.5,
    utility_lipschitz: float = 1.0,
    utility_param_std: float = 1.0,
) -> SweepResult:
    """Run the one-epoch-per-round protocol across client counts.

    Every k trains with E_r = 1 under the same calibrated noise; a noise-
    free single-client reference row is appended for comparison, and each
    private row carries the utility lower bound evaluated at its k. The
    bound's dispersion input is deliberately independent of the training
    noise multiplier (they live on different scales); override
    ``utility_param_std`` to explore it.
    """
    total = base_config.schedule.total()
    schedule = Schedule.uniform(1, total)
    base = replace(
        base_config,
        schedule=ScheduleConfig(epochs=1, rounds=total, total_epochs=total),
    )
    if ks is None:
        ks = [10, 25, 50, 100]
    seen, unique_ks = set(), []
    for k in ks:
        if k < 1:
            raise ConfigError(f"client counts must be >= 1, got {k}", field="clients")
        # k = 1 is the centralized case; the reference row below covers it.
        if k != 1 and k not in seen:
            seen.add(k)
            unique_ks.append(k)
    runs = base_config.runs if runs is None else runs
    prepared = prepare(base)

    rows = []
    for k in sorted(unique_ks):
        cfg = replace(base, clients=k)
        accs, losses, eps_rounds, wall = _run_setting(cfg, prepared, schedule, runs, threads)
        utility = utility_lower_bound(utility_param_std, utility_lipschitz, utility_level, k)
        rows.append(
            SweepRow(
                key=f"k={k}",
                method=_method_label(prepared),
                epochs=1,
                rounds=total,
                clients=k,
                epsilon=prepared.epsilon,
                mean_accuracy=float(np.mean(accs)),
                std_accuracy=_std(accs),
                mean_loss=float(np.mean(losses)),
                accuracies=tuple(accs),
                losses=tuple(losses),
                epsilon_per_round=eps_rounds,
                utility_bound=utility.bound,
                wall_times=tuple(wall),
            )
        )

    # Noise-free centralized reference: one client holding the full training
    # set, no noise. This is the ceiling the federated rows approach as k grows.
    ref_cfg = replace(
        base,
        clients=1,
        fraction=1.0,
        privacy=replace(base.privacy, epsilon=None, sigma=0.0),
    )
    ref_prepared = prepare(ref_cfg)
    accs, losses, eps_rounds, wall = _run_setting(ref_cfg, ref_prepared, schedule, runs, threads)
    rows.append(
        SweepRow(
            key="k=1(ref)",
            method="centralized-ref",
            epochs=1,
            rounds=total,
            clients=1,
            epsilon=math.inf,
            mean_accuracy=float(np.mean(accs)),
            std_accuracy=_std(accs),
            mean_loss=float(np.mean(losses)),
            accuracies=tuple(accs),
            losses=tuple(losses),
            epsilon_per_round=eps_rounds,
            utility_bound=None,
            wall_times=tuple(wall),
        )
    )
    return SweepResult(total_epochs=total, rows=tuple(rows), config=base)
