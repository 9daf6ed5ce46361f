"""Frequency sampling distributions and importance re-weighting.

Both the base law and the critic are zero-mean diagonal Gaussians over
frequency space. The critic never draws new frequencies: it only re-weights
the ones drawn once from the base by the density ratio critic/base.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .numcore import Rng

_LOG_2PI = np.log(2.0 * np.pi)
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class SamplingDistribution:
    log_std: np.ndarray

    def __post_init__(self):
        log_std = np.atleast_1d(np.asarray(self.log_std, dtype=np.float64)).copy()
        if log_std.ndim != 1 or log_std.size < 1:
            raise InvalidParameter("log_std must be a nonempty vector")
        if not np.all(np.isfinite(log_std)):
            raise InvalidParameter("log_std entries must be finite")
        log_std.flags.writeable = False
        object.__setattr__(self, "log_std", log_std)

    @classmethod
    def isotropic(cls, dim: int, std: float) -> "SamplingDistribution":
        if dim < 1:
            raise InvalidParameter(f"dim must be >= 1, got {dim}")
        if not std > 0:
            raise InvalidParameter(f"std must be > 0, got {std}")
        return cls(np.full(dim, np.log(std)))

    @property
    def dim(self) -> int:
        return self.log_std.size

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


@dataclass(frozen=True)
class FrequencyMatrix:
    """The k frequency vectors (one per row), drawn once and then frozen."""

    freqs: np.ndarray

    def __post_init__(self):
        freqs = np.array(self.freqs, dtype=np.float64, copy=True)
        if freqs.ndim != 2 or freqs.shape[0] < 1 or freqs.shape[1] < 1:
            raise InvalidParameter(f"freqs must be a nonempty k x d matrix, got shape {freqs.shape}")
        freqs.flags.writeable = False
        object.__setattr__(self, "freqs", freqs)

    @property
    def k(self) -> int:
        return self.freqs.shape[0]

    @property
    def dim(self) -> int:
        return self.freqs.shape[1]

    @property
    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.freqs.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.freqs, dtype="<f8").tobytes())
        return h.hexdigest()


def sample_frequencies(base: SamplingDistribution, k: int, rng: Rng) -> FrequencyMatrix:
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    z = rng.generator.standard_normal(size=(k, base.dim))
    return FrequencyMatrix(z * base.std)


def log_density(dist: SamplingDistribution, t) -> np.ndarray | float:
    """Log density of the diagonal normal at ``t`` (a vector, or k x d rows)."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-1] != dist.dim:
        raise InvalidParameter(f"frequency has dimension {t.shape[-1]}, distribution has {dist.dim}")
    scaled = t / dist.std
    out = -0.5 * np.sum(scaled * scaled, axis=-1) - np.sum(dist.log_std) - 0.5 * dist.dim * _LOG_2PI
    return float(out) if t.ndim == 1 else out


def _check_dims(critic, base, freqs):
    if not (critic.dim == base.dim == freqs.dim):
        raise InvalidParameter(f"dimension mismatch: critic {critic.dim}, base {base.dim}, freqs {freqs.dim}")


def _log_ratio(critic, base, freqs):
    return log_density(critic, freqs.freqs) - log_density(base, freqs.freqs)


def importance_weights(critic: SamplingDistribution, base: SamplingDistribution,
                       freqs: FrequencyMatrix, normalize: bool = True) -> np.ndarray:
    _check_dims(critic, base, freqs)
    log_w = _log_ratio(critic, base, freqs)
    if normalize:
        # shift before exponentiating; the rescaling cancels it anyway
        w = np.maximum(np.exp(log_w - log_w.max()), _TINY)
        return w * (freqs.k / w.sum())
    # extreme ratios underflow; keep every weight strictly positive
    return np.maximum(np.exp(log_w), _TINY)


def weights_grad_logstd(critic: SamplingDistribution, base: SamplingDistribution,
                        freqs: FrequencyMatrix, normalize: bool = True) -> np.ndarray:
    """Jacobian of the importance weights w.r.t. the critic's log_std, shape (k, d)."""
    _check_dims(critic, base, freqs)
    w = importance_weights(critic, base, freqs, normalize=normalize)
    # d log w_i / d log_std_j = t_ij^2 / std_j^2 - 1
    dlog = (freqs.freqs / critic.std) ** 2 - 1.0
    if normalize:
        dlog = dlog - (w @ dlog) / freqs.k
    return w[:, None] * dlog


def weighted_expectation(f_values, weights) -> float:
    f_values = np.asarray(f_values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if f_values.shape != weights.shape or f_values.ndim != 1:
        raise InvalidParameter(f"length mismatch: {f_values.shape} vs {weights.shape}")
    return float(np.dot(weights, f_values) / f_values.size)
