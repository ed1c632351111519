"""Deterministic numerical primitives.

Seeded splittable random streams, Gaussian sampling, vector norms, and the
log-gamma helper behind the expected-norm identity for Gaussian noise
vectors. Everything here is a pure function of its inputs: the same
(stream, arguments) always reproduce the same output, which is what makes
federated runs replayable regardless of client execution order.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

__all__ = [
    "RngStream",
    "gaussian_vector",
    "log_gamma",
    "expected_gaussian_norm",
    "l2_norm",
]

_U64_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class RngStream:
    """Immutable handle on one branch of a splittable random stream.

    A stream is identified by a 64-bit root seed plus a path of
    (label, index) pairs naming the consumer (e.g. client id, round,
    step). Identical (seed, path) means identical draws; distinct paths
    yield statistically independent generators because the child seed is
    a SHA-256 digest of the full identity, not a function of call order.
    """

    seed: int
    path: tuple[tuple[str, int], ...] = ()

    def child(self, label: str, index: int = 0) -> "RngStream":
        """Derive the sub-stream for one named consumer."""
        return RngStream(self.seed, self.path + ((label, int(index)),))

    def _key(self) -> int:
        h = hashlib.sha256()
        h.update(struct.pack("<Q", self.seed & _U64_MASK))
        for label, index in self.path:
            h.update(label.encode("utf-8"))
            h.update(b"\x00")
            h.update(struct.pack("<q", index))
        return int.from_bytes(h.digest()[:16], "little")

    def generator(self) -> np.random.Generator:
        """Fresh numpy generator for this stream; same stream, same output."""
        return np.random.Generator(np.random.PCG64(self._key()))


def gaussian_vector(stream: RngStream, n: int, std: float) -> np.ndarray:
    """Draw n i.i.d. zero-mean Gaussians with standard deviation ``std``.

    Deterministic given (stream, n, std). ``std = 0`` returns the zero
    vector, which is how noise-free runs are expressed.
    """
    if n < 1:
        raise DimensionError(f"gaussian_vector needs n >= 1, got {n}")
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if std == 0.0:
        return np.zeros(n)
    return stream.generator().standard_normal(n) * std


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0.

    Thin wrapper over math.lgamma with an explicit domain check; we only
    ever need the positive real axis and want a clean error rather than
    lgamma's pole behaviour.
    """
    if x <= 0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def expected_gaussian_norm(n: int, sigma: float, clip: float) -> float:
    """Mean l2 norm of an n-dimensional N(0, (sigma*clip)^2 I) draw.

    Evaluates sqrt(2) * sigma * clip * Gamma((n+1)/2) / Gamma(n/2), the
    chi-distribution mean scaled by the per-coordinate deviation. The
    Gamma ratio goes through log-gamma so the result stays finite for
    large n where Gamma itself overflows.
    """
    if n < 1:
        raise DimensionError(f"expected_gaussian_norm needs n >= 1, got {n}")
    if sigma < 0 or clip < 0:
        raise ValueError("sigma and clip must be >= 0")
    ratio = math.exp(log_gamma((n + 1) / 2) - log_gamma(n / 2))
    return math.sqrt(2.0) * sigma * clip * ratio


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm; zero exactly when v is the zero vector."""
    return float(np.linalg.norm(np.asarray(v, dtype=float)))
