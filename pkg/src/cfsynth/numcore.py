"""Seeded random streams, Gaussian sampling and the Adam update.

Matrices are plain ``float64`` numpy arrays throughout the package.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameter


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "little")


class Rng:
    """Deterministic random stream with labeled, order-independent forks.

    ``Rng(7).fork("freqs")`` always yields the same stream no matter how many
    draws were taken from the parent or its other forks.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise InvalidParameter(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def fork(self, label: str) -> "Rng":
        return Rng(self.seed, self.path + (_label_key(label),))

    def get_state(self) -> dict:
        return self.generator.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.generator.bit_generator.state = state

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


def gaussian_sample(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0 or not np.isfinite(std):
        raise InvalidParameter(f"std must be finite and >= 0, got {std}")
    if rows < 0 or cols < 0:
        raise InvalidParameter("rows and cols must be nonnegative")
    if std == 0:
        return np.full((rows, cols), float(mean))
    return rng.generator.normal(mean, std, size=(rows, cols))


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr: float = 0.01, **kwargs) -> "AdamState":
        return cls(0, np.zeros(shape), np.zeros(shape), lr=lr, **kwargs)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "shape": list(self.first_moment.shape),
            "first_moment": self.first_moment.ravel().tolist(),
            "second_moment": self.second_moment.ravel().tolist(),
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        shape = tuple(d["shape"])
        return cls(
            int(d["step"]),
            np.asarray(d["first_moment"], dtype=np.float64).reshape(shape),
            np.asarray(d["second_moment"], dtype=np.float64).reshape(shape),
            lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"],
        )


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, maximize: bool = False):
    """Bias-corrected Adam update.

    Returns ``(new_params, new_state)``. With ``maximize=True`` the step
    ascends the objective instead of descending it.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise InvalidParameter(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.first_moment.shape}"
        )
    if maximize:
        grad = -grad
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, step=step, first_moment=m, second_moment=v)
