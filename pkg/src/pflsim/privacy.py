"""DP-SGD mechanics and the analytic privacy accountant.

The accountant uses the closed-form minimum noise multiplier

    sigma_min = kappa * q * sqrt(T * ln(1/delta)) / epsilon

with T counted in epochs, q the per-step sampling probability, and kappa a
configurable constant factor. It is exactly invertible, which the
calibrate/achieved pair exploits. Intermediate budgets after t of T epochs
follow epsilon / sqrt(T/t), so partial training is always at least as
private as the finished run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import RngStream, gaussian_vector
from .errors import EmptyInputError, PreconditionError, ScheduleOverrunError
from .models import Example, ModelSpec, per_sample_gradients

__all__ = [
    "PrivacyBudget",
    "NoiseSpec",
    "AccountantConfig",
    "calibrate_sigma",
    "achieved_epsilon",
    "intermediate_epsilon",
    "parallel_compose",
    "clip_gradient",
    "dp_sgd_step",
    "StepResult",
]


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) differential-privacy budget."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class NoiseSpec:
    """Clipping norm and noise multiplier for one DP-SGD step.

    sigma = 0 recovers plain clipped SGD; clip may be float('inf') to model
    an effectively unclipped run.
    """

    clip: float
    sigma: float

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError(f"clip must be > 0, got {self.clip}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.sigma > 0 and not math.isfinite(self.clip):
            raise ValueError("clip must be finite when sigma > 0")


@dataclass(frozen=True)
class AccountantConfig:
    """Inputs to the analytic accountant besides the budget itself."""

    kappa: float
    q: float
    total_epochs: int

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be >= 1, got {self.total_epochs}")


def calibrate_sigma(budget: PrivacyBudget, cfg: AccountantConfig) -> float:
    """Minimum noise multiplier meeting the budget over the whole schedule."""
    return (
        cfg.kappa
        * cfg.q
        * math.sqrt(cfg.total_epochs * math.log(1.0 / budget.delta))
        / budget.epsilon
    )


def achieved_epsilon(sigma: float, delta: float, cfg: AccountantConfig) -> float:
    """Epsilon reached by a given noise multiplier; inverse of calibrate_sigma.

    sigma = 0 means no noise at all, reported as infinite epsilon rather
    than an error so non-private baselines flow through the same records.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if sigma == 0:
        return math.inf
    return cfg.kappa * cfg.q * math.sqrt(cfg.total_epochs * math.log(1.0 / delta)) / sigma


def intermediate_epsilon(
    final: PrivacyBudget, total_epochs: int, epochs_so_far: int
) -> float:
    """Budget consumed after a prefix of the schedule.

    Returns epsilon / sqrt(total/so_far): nondecreasing in epochs_so_far
    and equal to the final epsilon exactly when the schedule completes.
    """
    if total_epochs < 1 or epochs_so_far < 1:
        raise ValueError("epoch counts must be >= 1")
    if epochs_so_far > total_epochs:
        raise ScheduleOverrunError(
            f"consumed {epochs_so_far} epochs of a {total_epochs}-epoch schedule"
        )
    return final.epsilon / math.sqrt(total_epochs / epochs_so_far)


def parallel_compose(budgets: Sequence[PrivacyBudget], disjoint: bool) -> PrivacyBudget:
    """Compose mechanisms running on disjoint data shards.

    The composed cost is the componentwise maximum. The caller must assert
    disjointness; on overlapping shards the max rule does not apply and we
    refuse rather than report a wrong budget.
    """
    if not disjoint:
        raise PreconditionError(
            "parallel composition requires pairwise-disjoint shards"
        )
    if len(budgets) == 0:
        raise EmptyInputError("no budgets to compose")
    return PrivacyBudget(
        epsilon=max(b.epsilon for b in budgets),
        delta=max(b.delta for b in budgets),
    )


def clip_gradient(g: np.ndarray, clip: float) -> np.ndarray:
    """Rescale g to l2 norm at most clip, preserving direction."""
    if not clip > 0:
        raise ValueError(f"clip must be > 0, got {clip}")
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / clip)


class StepResult(NamedTuple):
    params: np.ndarray
    velocity: np.ndarray


def dp_sgd_step(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Sequence[Example],
    noise: NoiseSpec,
    lr: float,
    momentum: float,
    velocity: np.ndarray,
    stream: RngStream,
) -> StepResult:
    """One noisy minibatch update.

    Per-example gradients are clipped to noise.clip, summed, perturbed with
    N(0, (sigma*clip)^2 I), and averaged over the batch size L:

        g_bar      = (sum_i clip(g_i) + eta) / L
        velocity'  = momentum * velocity + g_bar
        params'    = params - lr * velocity'

    momentum = 0 gives the plain noisy-SGD update; noise is injected before
    the momentum accumulation.
    """
    if len(batch) == 0:
        raise EmptyInputError("dp_sgd_step needs a nonempty batch")
    xs = np.stack([np.asarray(ex.x, dtype=float) for ex in batch])
    ys = np.array([ex.y for ex in batch])
    new_params, new_velocity, _ = _dp_sgd_step_arrays(
        spec, params, xs, ys, noise, lr, momentum, velocity, stream
    )
    return StepResult(new_params, new_velocity)


def _dp_sgd_step_arrays(
    spec: ModelSpec,
    params: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    noise: NoiseSpec,
    lr: float,
    momentum: float,
    velocity: np.ndarray,
    stream: RngStream,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-level step shared by the federation loop and analysis runners.

    Returns (params', velocity', per-example gradient norms); the norms
    come out of the clipping computation for free and feed the empirical
    Lipschitz estimate in the degradation analysis.
    """
    if velocity.shape != params.shape:
        raise ValueError(
            f"velocity shape {velocity.shape} does not match params {params.shape}"
        )
    batch_size = xs.shape[0]
    grads = per_sample_gradients(spec, params, xs, ys)
    norms = np.linalg.norm(grads, axis=1)
    # Same arithmetic as clip_gradient: g / max(1, ||g||/C).
    denom = np.maximum(1.0, norms / noise.clip)
    grad_sum = (grads / denom[:, None]).sum(axis=0)
    noise_std = 0.0 if noise.sigma == 0 else noise.sigma * noise.clip
    eta = gaussian_vector(stream, params.shape[0], noise_std)
    g_bar = (grad_sum + eta) / batch_size
    new_velocity = momentum * velocity + g_bar
    new_params = params - lr * new_velocity
    return new_params, new_velocity, norms
