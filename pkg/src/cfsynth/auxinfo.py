"""Private auxiliary statistics released once before training.

The DP mean pairwise distance sets the base frequency scale (its inverse is
the base standard deviation, in the spirit of the median heuristic). The
optional DP label histogram drives label sampling at generation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidData, InvalidParameter, InvalidState
from .numcore import Rng
from .privacy import RdpLedger

FLOOR_FACTOR = 1e-3
_CHUNK = 256


@dataclass
class AuxRelease:
    mean_pairwise_distance: float
    sigma0: float
    label_probs: np.ndarray | None = None
    ledger_event_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = {
            "mean_pairwise_distance": float(self.mean_pairwise_distance),
            "sigma0": float(self.sigma0),
            "ledger_event_ids": list(self.ledger_event_ids),
        }
        if self.label_probs is not None:
            doc["label_probs"] = [float(p) for p in self.label_probs]
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "AuxRelease":
        probs = d.get("label_probs")
        return cls(float(d["mean_pairwise_distance"]), float(d["sigma0"]),
                   None if probs is None else np.asarray(probs, dtype=np.float64),
                   list(d.get("ledger_event_ids", [])))


def mean_pairwise_distance(data: np.ndarray) -> float:
    """Exact mean Euclidean distance over all unordered pairs of rows.

    Rows must lie in [0,1]^d. Computed in row blocks so memory stays O(n).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidParameter("need at least two records")
    if np.any(data < 0) or np.any(data > 1) or not np.all(np.isfinite(data)):
        raise InvalidData("pairwise-distance statistic requires every entry in [0, 1]")
    n = data.shape[0]
    total = 0.0
    for start in range(0, n, _CHUNK):
        block = data[start:start + _CHUNK]
        dist = cdist(block, data[start:])
        # keep only pairs (i, j) with j > i
        total += float(np.triu(dist, k=1).sum())
    return total / (n * (n - 1) / 2)


def mean_pairwise_distance_subsampled(data: np.ndarray, n_pairs: int, rng: Rng) -> float:
    """Monte-Carlo estimate from random pairs. Not covered by the DP sensitivity
    bound of the exact statistic; for diagnostics on very large n only."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < 2:
        raise InvalidParameter("need at least two records")
    i = rng.generator.integers(0, n, size=n_pairs)
    j = rng.generator.integers(0, n - 1, size=n_pairs)
    j = j + (j >= i)
    return float(np.linalg.norm(data[i] - data[j], axis=1).mean())


def pairwise_sensitivity(d: int, n: int) -> float:
    if n < 2 or d < 1:
        raise InvalidParameter(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    return 2.0 * np.sqrt(d) / n


def label_hist_sensitivity(n: int) -> float:
    if n < 1:
        raise InvalidParameter("need n >= 1")
    return np.sqrt(2.0) / n


def derive_sigma0(dp_mean_distance: float, d: int | None = None) -> float:
    """Base frequency std: the inverse of the (floored) DP mean pairwise distance."""
    if not dp_mean_distance > 0:
        raise InvalidParameter(f"mean distance must be > 0, got {dp_mean_distance}")
    return 1.0 / dp_mean_distance


class AuxReleaser:
    """Performs each auxiliary release at most once, charging the ledger.

    ``sigma_aux == 0`` means a non-private release: no noise is added and the
    ledger records it so that it reports an infinite epsilon.
    """

    def __init__(self, ledger: RdpLedger):
        self.ledger = ledger
        self.mean_distance: float | None = None
        self.label_probs: np.ndarray | None = None
        self.event_ids: list = []

    def _charge(self, sensitivity, sigma_aux, label):
        if sigma_aux == 0:
            eid = self.ledger.charge_nonprivate(sensitivity, label)
        else:
            eid = self.ledger.charge_gaussian(sensitivity, sensitivity * sigma_aux, label)
        self.event_ids.append(eid)

    def release_mean_distance(self, data: np.ndarray, sigma_aux: float, rng: Rng) -> float:
        if self.mean_distance is not None:
            raise InvalidState("mean pairwise distance was already released")
        if sigma_aux < 0:
            raise InvalidParameter("sigma_aux must be >= 0")
        data = np.asarray(data, dtype=np.float64)
        n, d = data.shape
        exact = mean_pairwise_distance(data)
        sens = pairwise_sensitivity(d, n)
        noisy = exact + (rng.generator.normal(0.0, sens * sigma_aux) if sigma_aux > 0 else 0.0)
        self._charge(sens, sigma_aux, "aux-pairwise-mean")
        self.mean_distance = max(noisy, FLOOR_FACTOR * np.sqrt(d))
        return self.mean_distance

    def release_label_histogram(self, labels, n_classes: int, sigma_aux: float, rng: Rng) -> np.ndarray:
        if self.label_probs is not None:
            raise InvalidState("label histogram was already released")
        if n_classes < 2:
            raise InvalidParameter("label histogram needs at least two classes")
        if sigma_aux < 0:
            raise InvalidParameter("sigma_aux must be >= 0")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size < 1 or labels.min() < 0 or labels.max() >= n_classes:
            raise InvalidData("labels must be integers in [0, n_classes)")
        n = labels.size
        hist = np.bincount(labels, minlength=n_classes) / n
        sens = label_hist_sensitivity(n)
        if sigma_aux > 0:
            hist = hist + rng.generator.normal(0.0, sens * sigma_aux, size=n_classes)
        self._charge(sens, sigma_aux, "aux-label-hist")
        hist = np.clip(hist, 0.0, None)
        total = hist.sum()
        self.label_probs = hist / total if total > 0 else np.full(n_classes, 1.0 / n_classes)
        return self.label_probs

    def result(self) -> AuxRelease:
        if self.mean_distance is None:
            raise InvalidState("mean pairwise distance has not been released")
        return AuxRelease(self.mean_distance, derive_sigma0(self.mean_distance),
                          self.label_probs, list(self.event_ids))
