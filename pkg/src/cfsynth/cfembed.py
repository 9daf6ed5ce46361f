"""Empirical characteristic-function embeddings, their sanitization, and the
(weighted) CF distance with analytic gradients.

An embedding stores real and imaginary parts separately; for ``k`` frequencies
the stacked real vector has ``2k`` coordinates and its L2 norm equals the
complex norm, so Gaussian noise on the stacked vector is the Gaussian
mechanism on the complex one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArtifact, InvalidParameter, InvalidState
from .freqdist import FrequencyMatrix, SamplingDistribution, weights_grad_logstd
from .numcore import Rng

EMBEDDING_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CfEmbedding:
    re: np.ndarray
    im: np.ndarray
    n_source: int
    freq_hash: str
    sanitized: bool = False
    noise_std: float = 0.0

    @property
    def k(self) -> int:
        return self.re.size

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.re**2 + self.im**2)))


@dataclass(frozen=True)
class CfdValue:
    value: float
    per_frequency: np.ndarray


def _phases(points: np.ndarray, freqs: FrequencyMatrix) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != freqs.dim:
        raise InvalidParameter(f"points of shape {points.shape} do not match frequency dim {freqs.dim}")
    return points @ freqs.freqs.T


def embed(data: np.ndarray, freqs: FrequencyMatrix) -> CfEmbedding:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise InvalidParameter("cannot embed an empty dataset")
    phase = _phases(data, freqs)
    n = data.shape[0]
    return CfEmbedding(
        re=np.cos(phase).sum(axis=0) / n,
        im=np.sin(phase).sum(axis=0) / n,
        n_source=n,
        freq_hash=freqs.hash,
    )


def cf_sensitivity(k: int, n: int) -> float:
    """L2 sensitivity of the mean CF vector under replacement of one record."""
    if k < 1 or n < 1:
        raise InvalidParameter(f"need k >= 1 and n >= 1, got k={k}, n={n}")
    return 2.0 * np.sqrt(k) / n


def sanitize(emb: CfEmbedding, sigma: float, rng: Rng, nonprivate: bool = False) -> CfEmbedding:
    """Gaussian mechanism on the embedding; can be applied once only.

    ``sigma`` is the noise multiplier; the added noise has standard deviation
    ``cf_sensitivity(k, n_source) * sigma`` on each of the 2k coordinates.
    ``nonprivate=True`` requires ``sigma == 0`` and marks the embedding as
    released without noise.
    """
    if emb.sanitized:
        raise InvalidState("embedding is already sanitized; the release is one-shot")
    if nonprivate:
        if sigma != 0:
            raise InvalidParameter("nonprivate release requires sigma == 0")
        return replace(emb, sanitized=True, noise_std=0.0)
    if not sigma > 0:
        raise InvalidParameter(f"noise multiplier must be > 0, got {sigma}")
    noise_std = cf_sensitivity(emb.k, emb.n_source) * sigma
    noise = rng.generator.normal(0.0, noise_std, size=2 * emb.k)
    return replace(
        emb,
        re=emb.re + noise[: emb.k],
        im=emb.im + noise[emb.k:],
        sanitized=True,
        noise_std=float(noise_std),
    )


def _check_pair(a: CfEmbedding, b: CfEmbedding):
    if a.k != b.k:
        raise InvalidParameter(f"embeddings have different k: {a.k} vs {b.k}")
    if a.freq_hash != b.freq_hash:
        raise InvalidParameter("embeddings were computed on different frequency draws")


def _errors(a: CfEmbedding, b: CfEmbedding) -> np.ndarray:
    return (a.re - b.re) ** 2 + (a.im - b.im) ** 2


def cfd(a: CfEmbedding, b: CfEmbedding) -> CfdValue:
    _check_pair(a, b)
    e = _errors(a, b)
    return CfdValue(float(e.sum() / a.k), e)


def weighted_cfd(a: CfEmbedding, b: CfEmbedding, weights) -> CfdValue:
    """Sum of weighted per-frequency errors (no 1/k factor)."""
    _check_pair(a, b)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (a.k,):
        raise InvalidParameter(f"weights must have length {a.k}, got shape {weights.shape}")
    e = _errors(a, b)
    return CfdValue(float(np.dot(weights, e)), e)


def loss_grad_points(target: CfEmbedding, gen_points: np.ndarray, freqs: FrequencyMatrix,
                     weights) -> np.ndarray:
    """Gradient of ``weighted_cfd(target, embed(gen_points))`` w.r.t. each point.

    Returns a ``B x d`` matrix.
    """
    if target.freq_hash != freqs.hash:
        raise InvalidParameter("target embedding was computed on a different frequency draw")
    phase = _phases(gen_points, freqs)
    b = phase.shape[0]
    cos, sin = np.cos(phase), np.sin(phase)
    re = cos.sum(axis=0) / b
    im = sin.sum(axis=0) / b
    w = np.asarray(weights, dtype=np.float64)
    # dL/dphase_bi = (2 w_i / B) [ -(re_i - a_re_i) sin + (im_i - a_im_i) cos ]
    c_re = 2.0 * w * (re - target.re) / b
    c_im = 2.0 * w * (im - target.im) / b
    dphase = cos * c_im - sin * c_re
    return dphase @ freqs.freqs


def loss_grad_logstd(target: CfEmbedding, gen_emb: CfEmbedding, freqs: FrequencyMatrix,
                     critic: SamplingDistribution, base: SamplingDistribution,
                     normalize: bool = True) -> np.ndarray:
    """Gradient of the weighted loss w.r.t. the critic's log_std (length d)."""
    _check_pair(target, gen_emb)
    e = _errors(target, gen_emb)
    return e @ weights_grad_logstd(critic, base, freqs, normalize=normalize)


def _encode_float_list(values) -> list:
    return [float(v) for v in np.asarray(values).ravel()]


def embedding_to_dict(emb: CfEmbedding, freqs: FrequencyMatrix, sigma0, epsilon_charged,
                      delta: float, extra: dict | None = None) -> dict:
    if emb.freq_hash != freqs.hash:
        raise InvalidParameter("embedding does not belong to these frequencies")
    doc = {
        "version": EMBEDDING_FORMAT_VERSION,
        "k": emb.k,
        "d": freqs.dim,
        "n_source": emb.n_source,
        "freq_hash": emb.freq_hash,
        "freqs": freqs.freqs.tolist(),
        "sigma0": _encode_float_list(np.broadcast_to(sigma0, (freqs.dim,))),
        "noise_std": float(emb.noise_std),
        "epsilon_charged": _json_real(epsilon_charged),
        "delta": float(delta),
        "re": _encode_float_list(emb.re),
        "im": _encode_float_list(emb.im),
        "sanitized": bool(emb.sanitized),
    }
    if extra:
        doc.update(extra)
    return doc


def _json_real(x: float):
    return "inf" if x == float("inf") else float(x)


def embedding_from_dict(doc: dict):
    """Inverse of :func:`embedding_to_dict`; returns ``(embedding, freqs, sigma0, doc)``."""
    try:
        if doc["version"] != EMBEDDING_FORMAT_VERSION:
            raise InvalidArtifact(f"unsupported embedding version {doc['version']}")
        freqs = FrequencyMatrix(np.asarray(doc["freqs"], dtype=np.float64).reshape(doc["k"], doc["d"]))
        emb = CfEmbedding(
            re=np.asarray(doc["re"], dtype=np.float64),
            im=np.asarray(doc["im"], dtype=np.float64),
            n_source=int(doc["n_source"]),
            freq_hash=doc["freq_hash"],
            sanitized=bool(doc.get("sanitized", True)),
            noise_std=float(doc["noise_std"]),
        )
        sigma0 = np.asarray(doc["sigma0"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArtifact):
            raise
        raise InvalidArtifact(f"malformed embedding document: {exc}") from exc
    if freqs.hash != emb.freq_hash:
        raise InvalidArtifact("frequency hash does not match the stored frequencies")
    if emb.re.shape != (freqs.k,) or emb.im.shape != (freqs.k,):
        raise InvalidArtifact("embedding length does not match k")
    return emb, freqs, sigma0, doc


def save_embedding(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_embedding(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidArtifact(f"{path}: not valid JSON ({exc})") from exc
    return embedding_from_dict(doc)
