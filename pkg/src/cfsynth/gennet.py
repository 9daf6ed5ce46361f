"""Implicit generator: (latent, label) -> encoded synthetic record.

Architecture: [fc -> bn -> relu] per hidden layer, then fc -> output head.
The head applies (tanh + 1) / 2 to continuous slots and a softmax to each
categorical block. When conditional, the label one-hot is an input and is
copied verbatim into the label block of the output.

Forward and backward passes are written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Schema, decode  # noqa: F401  re-exported
from .errors import InvalidParameter, InvalidState, NumericFailure
from .numcore import Rng

CHECKPOINT_VERSION = 1


@dataclass
class LatentBatch:
    z: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2 or self.z.shape[0] < 1:
            raise InvalidParameter("latent batch must be a nonempty B x latent_dim matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.z.shape[0],):
                raise InvalidParameter("need one label per latent row")

    @property
    def size(self) -> int:
        return self.z.shape[0]


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def bn_backward(dy, xhat, gamma, inv_std):
    """Input and parameter gradients of training-mode batch normalization."""
    b = dy.shape[0]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * gamma
    dx = inv_std / b * (b * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dx, dgamma, dbeta


class GeneratorNet:
    def __init__(self, schema: Schema, latent_dim: int, hidden_dims, params: dict, running: dict,
                 bn_momentum: float = 0.9, bn_eps: float = 1e-5):
        self.schema = schema
        self.latent_dim = int(latent_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.label_count = schema.label_count
        self.params = params
        self.running = running
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.mode = "train"
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.latent_dim + self.label_count

    @property
    def output_dim(self) -> int:
        return self.schema.d_aug

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def train(self) -> "GeneratorNet":
        self.mode = "train"
        return self

    def eval(self) -> "GeneratorNet":
        self.mode = "eval"
        self._cache = None
        return self

    def _inputs(self, batch: LatentBatch) -> np.ndarray:
        if batch.z.shape[1] != self.latent_dim:
            raise InvalidParameter(f"latent dim {batch.z.shape[1]} != {self.latent_dim}")
        if self.label_count == 0:
            return batch.z
        if batch.labels is None:
            raise InvalidParameter("conditional generator needs labels")
        if batch.labels.min() < 0 or batch.labels.max() >= self.label_count:
            raise InvalidParameter("label index out of range")
        return np.hstack([batch.z, one_hot(batch.labels, self.label_count)])

    def forward(self, batch: LatentBatch) -> np.ndarray:
        x = self._inputs(batch)
        train = self.mode == "train"
        cache = {"layers": [], "labels": batch.labels}
        h = x
        for i in range(len(self.hidden_dims)):
            W, b = self.params[f"fc{i}.W"], self.params[f"fc{i}.b"]
            gamma, beta = self.params[f"bn{i}.gamma"], self.params[f"bn{i}.beta"]
            a = h @ W + b
            stats = self.running[f"bn{i}"]
            if train:
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                m = self.bn_momentum
                stats["mean"] = m * stats["mean"] + (1 - m) * mu
                stats["var"] = m * stats["var"] + (1 - m) * var
            else:
                mu, var = stats["mean"], stats["var"]
            inv_std = 1.0 / np.sqrt(var + self.bn_eps)
            xhat = (a - mu) * inv_std
            y = gamma * xhat + beta
            out = np.maximum(y, 0.0)
            if not np.all(np.isfinite(out)):
                raise NumericFailure(f"nonfinite activation in hidden layer {i}")
            cache["layers"].append({"h_in": h, "xhat": xhat, "inv_std": inv_std, "y": y})
            h = out
        logits = h @ self.params["out.W"] + self.params["out.b"]
        if not np.all(np.isfinite(logits)):
            raise NumericFailure(f"nonfinite activation in output layer {len(self.hidden_dims)}")
        result = np.empty((x.shape[0], self.output_dim))
        pos = 0
        for c, start, stop in self.schema.blocks():
            if c.name == self.schema.label_column:
                result[:, start:stop] = x[:, self.latent_dim:]
                continue
            block = logits[:, pos:pos + c.width]
            if c.kind == "continuous":
                result[:, start:stop] = (np.tanh(block) + 1.0) / 2.0
            else:
                result[:, start:stop] = softmax(block)
            pos += c.width
        cache["h_last"] = h
        cache["out"] = result
        self._cache = cache if train else None
        return result

    def backward(self, upstream: np.ndarray) -> dict:
        """Parameter gradients given dLoss/dOutput from the last train-mode forward."""
        if self._cache is None:
            raise InvalidState("backward called without a preceding train-mode forward")
        cache = self._cache
        out = cache["out"]
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != out.shape:
            raise InvalidParameter(f"upstream gradient shape {upstream.shape} != output {out.shape}")
        dlogits = np.empty((out.shape[0], self.schema.feature_width))
        pos = 0
        for c, start, stop in self.schema.blocks():
            if c.name == self.schema.label_column:
                continue
            g = upstream[:, start:stop]
            s = out[:, start:stop]
            if c.kind == "continuous":
                # out = (tanh + 1)/2 -> d out / d logit = (1 - tanh^2)/2 = 2 s (1 - s)
                dlogits[:, pos:pos + 1] = g * 2.0 * s * (1.0 - s)
            else:
                dlogits[:, pos:pos + c.width] = s * (g - np.sum(g * s, axis=1, keepdims=True))
            pos += c.width

        grads = {}
        h = cache["h_last"]
        grads["out.W"] = h.T @ dlogits
        grads["out.b"] = dlogits.sum(axis=0)
        dh = dlogits @ self.params["out.W"].T
        for i in reversed(range(len(self.hidden_dims))):
            layer = cache["layers"][i]
            dy = dh * (layer["y"] > 0)
            da, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = bn_backward(
                dy, layer["xhat"], self.params[f"bn{i}.gamma"], layer["inv_std"])
            grads[f"fc{i}.W"] = layer["h_in"].T @ da
            grads[f"fc{i}.b"] = da.sum(axis=0)
            dh = da @ self.params[f"fc{i}.W"].T
        return grads

    def to_dict(self, train_config_echo: dict | None = None) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "schema_hash": self.schema.hash,
            "schema": self.schema.to_dict(),
            "latent_dim": self.latent_dim,
            "label_count": self.label_count,
            "hidden_dims": list(self.hidden_dims),
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
            "layers": [{"name": k, "shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params.items()],
            "bn_running_stats": {k: {"mean": v["mean"].tolist(), "var": v["var"].tolist()}
                                 for k, v in self.running.items()},
            "train_config_echo": train_config_echo or {},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorNet":
        schema = Schema.from_dict(doc["schema"])
        if schema.hash != doc["schema_hash"]:
            raise InvalidParameter("checkpoint schema hash mismatch")
        params = {layer["name"]: np.asarray(layer["data"], dtype=np.float64).reshape(layer["shape"])
                  for layer in doc["layers"]}
        running = {k: {"mean": np.asarray(v["mean"], dtype=np.float64),
                       "var": np.asarray(v["var"], dtype=np.float64)}
                   for k, v in doc["bn_running_stats"].items()}
        return cls(schema, doc["latent_dim"], doc["hidden_dims"], params, running,
                   doc.get("bn_momentum", 0.9), doc.get("bn_eps", 1e-5))


def init(schema: Schema, latent_dim: int, hidden_dims, label_count: int | None, rng: Rng,
         bn_momentum: float = 0.9, bn_eps: float = 1e-5) -> GeneratorNet:
    """He-initialized generator; biases and BN shifts zero, BN scales one."""
    hidden_dims = tuple(hidden_dims)
    if not hidden_dims:
        raise InvalidParameter("generator needs at least one hidden layer")
    if latent_dim < 1 or any(h < 1 for h in hidden_dims):
        raise InvalidParameter("latent_dim and hidden widths must be >= 1")
    if label_count is not None and label_count != schema.label_count:
        raise InvalidParameter(f"label_count {label_count} does not match schema ({schema.label_count})")
    if schema.feature_width < 1:
        raise InvalidParameter("schema has no feature columns to generate")
    params, running = {}, {}
    fan_in = latent_dim + schema.label_count
    for i, width in enumerate(hidden_dims):
        params[f"fc{i}.W"] = rng.generator.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        params[f"fc{i}.b"] = np.zeros(width)
        params[f"bn{i}.gamma"] = np.ones(width)
        params[f"bn{i}.beta"] = np.zeros(width)
        running[f"bn{i}"] = {"mean": np.zeros(width), "var": np.ones(width)}
        fan_in = width
    params["out.W"] = rng.generator.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, schema.feature_width))
    params["out.b"] = np.zeros(schema.feature_width)
    return GeneratorNet(schema, latent_dim, hidden_dims, params, running, bn_momentum, bn_eps)


def forward(net: GeneratorNet, batch: LatentBatch) -> np.ndarray:
    return net.forward(batch)


def backward(net: GeneratorNet, upstream: np.ndarray) -> dict:
    return net.backward(upstream)
