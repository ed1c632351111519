"""Small classifiers with per-example gradients.

Linear softmax and one-hidden-layer MLP (ReLU or tempered sigmoid),
cross-entropy loss, and manual backpropagation. Per-example gradients are
the hard requirement here: the private optimizer clips each example's
gradient individually, so autograd-over-a-batch is not enough.

Parameter layout is a single flat float64 vector, layer-major, weights
before biases within a layer:

    linear:  [W (d*m, row-major), b (m)]
    mlp:     [W1 (d*h), b1 (h), W2 (h*m), b2 (m)]

The layout is fixed so averaging and noise addition across clients operate
on aligned coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .errors import DimensionError, EmptyInputError

__all__ = [
    "Activation",
    "ModelSpec",
    "Example",
    "EvalResult",
    "tempered_sigmoid",
    "param_count",
    "init_params",
    "forward",
    "forward_batch",
    "loss",
    "per_sample_gradient",
    "per_sample_gradients",
    "predict",
    "evaluate",
]

RELU = "relu"
TEMPERED_SIGMOID = "tempered_sigmoid"


@dataclass(frozen=True)
class Activation:
    """Hidden-layer nonlinearity.

    ``tempered_sigmoid`` is scale/(1 + exp(-temp*z)) - offset, a bounded
    sigmoid family; (scale, temp, offset) = (2, 2, 1) is exactly tanh.
    scale/temp/offset are ignored for relu.
    """

    kind: str = RELU
    scale: float = 2.0
    temp: float = 2.0
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in (RELU, TEMPERED_SIGMOID):
            raise ValueError(f"unknown activation kind: {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: linear softmax or one-hidden-layer MLP."""

    input_dim: int
    num_classes: int
    hidden_dim: int | None = None
    activation: Activation = Activation()

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")

    @property
    def is_mlp(self) -> bool:
        return self.hidden_dim is not None


@dataclass(frozen=True)
class Example:
    """One labelled training point."""

    x: np.ndarray
    y: int


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    mean_loss: float


def tempered_sigmoid(z: float, scale: float, temp: float, offset: float) -> float:
    """Bounded activation scale/(1 + exp(-temp*z)) - offset.

    Computed through the numerically stable logistic so large |z| saturates
    instead of overflowing.
    """
    return scale * _logistic(temp * z) - offset


def _logistic(t):
    # Stable elementwise 1/(1+exp(-t)); works on scalars and arrays.
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    if out.ndim == 0:
        return float(out)
    return out


def param_count(spec: ModelSpec) -> int:
    """Total number of parameters under the flat layout."""
    d, m = spec.input_dim, spec.num_classes
    if spec.is_mlp:
        h = spec.hidden_dim
        return (d + 1) * h + (h + 1) * m
    return (d + 1) * m


def _split(spec: ModelSpec, params: np.ndarray):
    """View the flat vector as per-layer weight matrices and bias vectors."""
    d, m = spec.input_dim, spec.num_classes
    if params.shape != (param_count(spec),):
        raise DimensionError(
            f"parameter vector has length {params.shape}, expected ({param_count(spec)},)"
        )
    if not spec.is_mlp:
        w = params[: d * m].reshape(d, m)
        b = params[d * m :]
        return w, b
    h = spec.hidden_dim
    w1 = params[: d * h].reshape(d, h)
    b1 = params[d * h : d * h + h]
    off = d * h + h
    w2 = params[off : off + h * m].reshape(h, m)
    b2 = params[off + h * m :]
    return w1, b1, w2, b2


def init_params(spec: ModelSpec, stream: RngStream) -> np.ndarray:
    """Seeded initial parameter vector.

    Weights are uniform in [-a, a] with a = sqrt(6/(fan_in + fan_out)) per
    layer; biases start at zero.
    """
    rng = stream.generator()
    d, m = spec.input_dim, spec.num_classes

    def layer(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=fan_in * fan_out)
        return w, np.zeros(fan_out)

    if not spec.is_mlp:
        w, b = layer(d, m)
        return np.concatenate([w, b])
    h = spec.hidden_dim
    w1, b1 = layer(d, h)
    w2, b2 = layer(h, m)
    return np.concatenate([w1, b1, w2, b2])


def forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Raw (pre-softmax) class scores for a single input."""
    return forward_batch(spec, params, np.asarray(x, dtype=float)[None, :])[0]


def forward_batch(spec: ModelSpec, params: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Class scores for a batch of inputs, shape (n, num_classes)."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != spec.input_dim:
        raise DimensionError(
            f"feature batch has shape {xs.shape}, expected (n, {spec.input_dim})"
        )
    if not spec.is_mlp:
        w, b = _split(spec, params)
        return xs @ w + b
    w1, b1, w2, b2 = _split(spec, params)
    hidden = _activate(spec.activation, xs @ w1 + b1)
    return hidden @ w2 + b2


def _activate(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == RELU:
        return np.maximum(z, 0.0)
    return act.scale * _logistic(act.temp * z) - act.offset


def _activate_grad(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == RELU:
        return (z > 0).astype(float)
    s = _logistic(act.temp * z)
    return act.scale * act.temp * s * (1.0 - s)


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss(scores: np.ndarray, y: int) -> float:
    """Cross-entropy -log softmax(scores)[y], max-subtracted for stability."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= y < scores.shape[-1]:
        raise ValueError(f"label {y} out of range for {scores.shape[-1]} classes")
    shifted = scores - scores.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[y])


def per_sample_gradient(spec: ModelSpec, params: np.ndarray, ex: Example) -> np.ndarray:
    """Exact gradient of loss(forward(x), y) w.r.t. the flat parameters."""
    x = np.asarray(ex.x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise DimensionError(
            f"example has {x.shape} features, expected ({spec.input_dim},)"
        )
    return per_sample_gradients(spec, params, x[None, :], np.array([ex.y]))[0]


def per_sample_gradients(
    spec: ModelSpec, params: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """Per-example loss gradients for a batch, shape (n, param_count).

    One vectorized backward pass; row i equals
    per_sample_gradient(spec, params, Example(xs[i], ys[i])).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys)
    n = xs.shape[0]
    if n == 0:
        raise EmptyInputError("gradient batch is empty")
    m = spec.num_classes
    if ys.shape != (n,):
        raise DimensionError(f"labels have shape {ys.shape}, expected ({n},)")
    if np.any((ys < 0) | (ys >= m)):
        raise ValueError(f"labels out of range for {m} classes")

    if not spec.is_mlp:
        w, b = _split(spec, params)
        probs = _softmax(xs @ w + b)
        err = probs
        err[np.arange(n), ys] -= 1.0  # dL/dscores = softmax - onehot
        grad_w = np.einsum("ni,nj->nij", xs, err).reshape(n, -1)
        return np.concatenate([grad_w, err], axis=1)

    w1, b1, w2, b2 = _split(spec, params)
    z1 = xs @ w1 + b1
    hidden = _activate(spec.activation, z1)
    probs = _softmax(hidden @ w2 + b2)
    err = probs
    err[np.arange(n), ys] -= 1.0
    grad_w2 = np.einsum("nh,nm->nhm", hidden, err).reshape(n, -1)
    dz1 = (err @ w2.T) * _activate_grad(spec.activation, z1)
    grad_w1 = np.einsum("nd,nh->ndh", xs, dz1).reshape(n, -1)
    return np.concatenate([grad_w1, dz1, grad_w2, err], axis=1)


def predict(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> int:
    """Label with maximal score; ties go to the lowest index."""
    return int(np.argmax(forward(spec, params, x)))


def evaluate(spec: ModelSpec, params: np.ndarray, dataset) -> EvalResult:
    """Accuracy and mean cross-entropy over a dataset."""
    xs, ys = dataset.features, dataset.labels
    n = xs.shape[0]
    if n == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    scores = forward_batch(spec, params, xs)
    preds = np.argmax(scores, axis=1)
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(n), ys]
    return EvalResult(
        accuracy=float(np.mean(preds == ys)),
        mean_loss=float(np.mean(losses)),
    )
