"""Federated orchestration: schedules, client-local training, averaging.

One global round broadcasts the current parameters, lets every client run
its local epochs of noisy SGD on its own shard, and averages the returned
parameter vectors. Client work is a pure function of (global params,
client stream), so rounds can fan out to threads and still produce results
bit-identical to sequential execution.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, Prepared, prepare
from .core import RngStream
from .data import Dataset
from .errors import ConfigError, DimensionError, DivergedRunError, EmptyInputError
from .models import EvalResult, ModelSpec, evaluate, init_params
from .privacy import NoiseSpec, _dp_sgd_step_arrays, intermediate_epsilon

__all__ = [
    "Schedule",
    "ClientState",
    "RoundRecord",
    "PflResult",
    "fed_avg",
    "local_train",
    "partition_iid",
    "run_pfl",
]


@dataclass(frozen=True)
class Schedule:
    """Global rounds and the number of local epochs in each."""

    rounds: int
    local_epochs: tuple[int, ...]

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if len(self.local_epochs) != self.rounds:
            raise ValueError(
                f"{len(self.local_epochs)} epoch entries for {self.rounds} rounds"
            )
        if any(e < 1 for e in self.local_epochs):
            raise ValueError("every round needs at least one local epoch")

    @property
    def total_epochs(self) -> int:
        return int(sum(self.local_epochs))

    @classmethod
    def uniform(cls, epochs: int, rounds: int) -> "Schedule":
        return cls(rounds=rounds, local_epochs=(epochs,) * rounds)


@dataclass
class ClientState:
    """One simulated client: its shard plus the transient optimizer state."""

    id: int
    shard: Dataset
    params: np.ndarray | None = None
    velocity: np.ndarray | None = None


@dataclass(frozen=True)
class RoundRecord:
    """Observability record emitted after each global round."""

    round: int
    checksum: str
    eval: EvalResult
    epsilon_spent: float


@dataclass(frozen=True)
class PflResult:
    final_params: np.ndarray
    records: tuple[RoundRecord, ...]
    epsilon: float
    shard_overlap: float


def fed_avg(param_sets: list[np.ndarray]) -> np.ndarray:
    """Coordinatewise arithmetic mean of client parameter vectors."""
    if len(param_sets) == 0:
        raise EmptyInputError("no parameter vectors to average")
    length = param_sets[0].shape
    for i, p in enumerate(param_sets):
        if p.shape != length:
            raise DimensionError(
                f"parameter vector {i} has shape {p.shape}, expected {length}"
            )
    return np.mean(np.stack(param_sets), axis=0)


def local_train(
    client: ClientState,
    global_params: np.ndarray,
    epochs: int,
    noise: NoiseSpec,
    lr: float,
    momentum: float,
    batch_size: int,
    stream: RngStream,
    model_spec: ModelSpec,
) -> np.ndarray:
    """Run one client's local epochs starting from the broadcast parameters.

    Each epoch performs ceil(shard/batch_size) steps; every step samples a
    fresh size-L minibatch uniformly without replacement. Optimizer state
    (velocity) is reset at round start, so clients carry nothing between
    rounds. Batch sampling and noise use separate stream branches, keyed by
    a flat step counter, making the whole call replayable.
    """
    n = client.shard.n
    if batch_size > n:
        raise ConfigError(
            f"batch_size {batch_size} exceeds client {client.id} shard size {n}",
            field="optimizer.batch_size",
        )
    params = np.array(global_params, dtype=float)
    velocity = np.zeros_like(params)
    xs, ys = client.shard.features, client.shard.labels
    steps_per_epoch = math.ceil(n / batch_size)
    step = 0
    for _ in range(epochs):
        for _ in range(steps_per_epoch):
            idx = stream.child("sample", step).generator().choice(
                n, size=batch_size, replace=False
            )
            params, velocity, _ = _dp_sgd_step_arrays(
                model_spec, params, xs[idx], ys[idx], noise, lr, momentum, velocity,
                stream.child("noise", step),
            )
            step += 1
    client.params = params
    client.velocity = velocity
    return params


def partition_iid(dataset: Dataset, k: int, fraction: float, stream: RngStream) -> list[Dataset]:
    """Sample k per-client shards of size floor(fraction * n).

    Each shard is drawn uniformly without replacement, independently per
    client, so shards of different clients may overlap.
    """
    indices = _partition_indices(dataset.n, k, fraction, stream)
    return [dataset.subset(idx) for idx in indices]


def _partition_indices(n: int, k: int, fraction: float, stream: RngStream) -> list[np.ndarray]:
    if not 0 < fraction <= 1:
        raise ConfigError(f"must be in (0, 1], got {fraction}", field="fraction")
    if k < 1:
        raise ConfigError(f"must be >= 1, got {k}", field="clients")
    shard_size = int(fraction * n)
    if shard_size < 1:
        raise ConfigError(
            f"fraction {fraction} of {n} samples leaves an empty shard", field="fraction"
        )
    return [
        stream.child("client", i).generator().choice(n, size=shard_size, replace=False)
        for i in range(k)
    ]


def _overlap_fraction(indices: list[np.ndarray], n: int) -> float:
    """Mean pairwise |A_i intersect A_j| / shard_size across client pairs."""
    k = len(indices)
    if k < 2:
        return 0.0
    counts = np.bincount(np.concatenate(indices), minlength=n)
    # Each index is unique within a shard, so pair intersections total
    # sum_x C(count_x, 2).
    pair_hits = float(np.sum(counts * (counts - 1) // 2))
    pairs = k * (k - 1) / 2
    return pair_hits / (pairs * len(indices[0]))


def run_pfl(
    config: ExperimentConfig,
    run_index: int = 0,
    prepared: Prepared | None = None,
    schedule: Schedule | None = None,
    threads: int = 1,
) -> PflResult:
    """Execute the full private federated protocol for one run.

    Per round r: broadcast the global parameters, train every client for
    E_r local epochs, average the results, evaluate on the held-out test
    set, and record the budget consumed so far. Raises DivergedRunError
    naming the round if parameters go non-finite.

    Stream layout (stable; replays and external oracles rely on it): the
    run's root is RngStream(master_seed).child("run", run_index), with
    children "partition", "init", and "round" r / "client" i for the
    per-client training streams.
    """
    if prepared is None:
        prepared = prepare(config)
    if schedule is None:
        schedule = resolve_schedule(config)
    total_epochs = schedule.total_epochs

    run_stream = RngStream(config.master_seed).child("run", run_index)
    indices = _partition_indices(
        prepared.train.n, config.clients, config.fraction, run_stream.child("partition")
    )
    if config.optimizer.batch_size > len(indices[0]):
        raise ConfigError(
            f"batch_size {config.optimizer.batch_size} exceeds shard size {len(indices[0])}",
            field="optimizer.batch_size",
        )
    overlap = _overlap_fraction(indices, prepared.train.n)
    clients = [ClientState(i, prepared.train.subset(idx)) for i, idx in enumerate(indices)]

    params = init_params(prepared.model_spec, run_stream.child("init"))
    opt = config.optimizer
    records: list[RoundRecord] = []
    epochs_done = 0

    def train_client(client: ClientState, round_index: int, epochs: int) -> np.ndarray:
        stream = run_stream.child("round", round_index).child("client", client.id)
        return local_train(
            client, params, epochs, prepared.noise, opt.lr, opt.momentum,
            opt.batch_size, stream, model_spec=prepared.model_spec,
        )

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for r in range(1, schedule.rounds + 1):
            epochs_r = schedule.local_epochs[r - 1]
            if pool is not None:
                results = list(pool.map(lambda c: train_client(c, r, epochs_r), clients))
            else:
                results = [train_client(c, r, epochs_r) for c in clients]
            params = fed_avg(results)
            if not np.all(np.isfinite(params)):
                raise DivergedRunError(
                    f"non-finite parameters after round {r}", round_index=r
                )
            epochs_done += epochs_r
            if prepared.budget is not None:
                spent = intermediate_epsilon(prepared.budget, total_epochs, epochs_done)
            else:
                spent = math.inf
            records.append(
                RoundRecord(
                    round=r,
                    checksum=hashlib.sha256(params.tobytes()).hexdigest(),
                    eval=evaluate(prepared.model_spec, params, prepared.test),
                    epsilon_spent=spent,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()

    return PflResult(
        final_params=params,
        records=tuple(records),
        epsilon=prepared.epsilon,
        shard_overlap=overlap,
    )


def resolve_schedule(config: ExperimentConfig) -> Schedule:
    """Build the concrete Schedule from a config; needs an explicit shape."""
    sched = config.schedule
    if sched.local_epochs is not None:
        return Schedule(rounds=len(sched.local_epochs), local_epochs=sched.local_epochs)
    if sched.epochs is not None and sched.rounds is not None:
        return Schedule.uniform(sched.epochs, sched.rounds)
    raise ConfigError(
        "a single run needs (epochs, rounds) or an explicit local_epochs list",
        field="schedule",
    )
