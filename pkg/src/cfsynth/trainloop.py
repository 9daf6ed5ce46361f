"""Training orchestration.

:func:`prepare` is the only code that reads the private data: it performs
the auxiliary releases, draws the frequencies once and sanitizes the CF
embedding. :func:`train` works purely from the resulting
:class:`SanitizedRelease`, alternating generator descent with critic ascent
on the re-weighted CF distance. Nothing in :func:`train` can charge the
ledger; the ledger text is compared before and after to prove it.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .auxinfo import AuxRelease, AuxReleaser
from .cfembed import (CfEmbedding, cf_sensitivity, embed, embedding_from_dict, embedding_to_dict,
                      loss_grad_logstd, loss_grad_points, sanitize, weighted_cfd, cfd)
from .dataio import EncodedDataset, Schema, decode_batch
from .errors import InvalidParameter, InvalidState, NumericFailure
from .freqdist import FrequencyMatrix, SamplingDistribution, importance_weights, sample_frequencies
from .gennet import GeneratorNet, LatentBatch, init as init_generator
from .numcore import AdamState, Rng, adam_step
from .privacy import DpBudget, RdpLedger, split_budget, to_eps_delta

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    k: int = 1000
    iterations: int = 8000
    n_gen: int = 5
    batch_size: int = 1100
    lr_gen: float = 0.01
    lr_critic: float = 0.01
    normalize_weights: bool = True
    clamp_range: tuple = (0.1, 10.0)
    critic_enabled: bool = True
    latent_dim: int = 16
    hidden_dims: tuple = (256, 256)
    seed: int = 0
    budget: DpBudget = DpBudget(1.0, 1e-5, 0.5)
    nonprivate: bool = False
    label_hist_enabled: bool = False
    # multiplies the released base scale; post-processing, used for ablations
    sigma0_scale: float = 1.0
    checkpoint_every: int | None = None

    def __post_init__(self):
        for name in ("k", "n_gen", "batch_size", "latent_dim"):
            if getattr(self, name) < 1:
                raise InvalidParameter(f"{name} must be >= 1")
        if self.iterations < 0:
            raise InvalidParameter("iterations must be >= 0")
        if not (self.lr_gen > 0 and self.lr_critic > 0):
            raise InvalidParameter("learning rates must be > 0")
        lo, hi = self.clamp_range
        if not 0 < lo <= 1 <= hi:
            raise InvalidParameter(f"clamp_range must satisfy 0 < low <= 1 <= high, got {self.clamp_range}")
        if not self.sigma0_scale > 0:
            raise InvalidParameter("sigma0_scale must be > 0")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        object.__setattr__(self, "clamp_range", tuple(self.clamp_range))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["clamp_range"] = list(self.clamp_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("budget"), dict):
            d["budget"] = DpBudget(**d["budget"])
        for key in ("hidden_dims", "clamp_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def nonprivate_mode(config: TrainConfig) -> TrainConfig:
    """Same pipeline with every release noiseless; the ledger then reports eps = inf."""
    return replace(config, nonprivate=True)


@dataclass
class SanitizedRelease:
    """Everything training may see: the public outputs of the private releases."""

    target: CfEmbedding
    freqs: FrequencyMatrix
    sigma0: float
    aux: AuxRelease
    ledger: RdpLedger
    delta: float
    epsilon_cf: float

    @property
    def epsilon(self) -> float:
        return to_eps_delta(self.ledger, self.delta) if self.ledger.events else 0.0

    def embedding_doc(self, extra: dict | None = None) -> dict:
        return embedding_to_dict(self.target, self.freqs, self.sigma0, self.epsilon_cf, self.delta, extra)

    def save(self, out_dir, extra: dict | None = None) -> dict:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "embedding": out_dir / "embedding.json",
            "aux": out_dir / "aux.json",
            "ledger": out_dir / "ledger.json",
        }
        _write_json(paths["embedding"], self.embedding_doc(extra))
        _write_json(paths["aux"], {**self.aux.to_dict(), **(extra or {})})
        paths["ledger"].write_text(self.ledger.dumps(self.delta), encoding="utf-8")
        return paths

    @classmethod
    def load(cls, embedding_path, aux_path, ledger_path) -> "SanitizedRelease":
        with open(embedding_path, encoding="utf-8") as fh:
            emb, freqs, sigma0, doc = embedding_from_dict(json.load(fh))
        with open(aux_path, encoding="utf-8") as fh:
            aux = AuxRelease.from_dict(json.load(fh))
        with open(ledger_path, encoding="utf-8") as fh:
            ledger = RdpLedger.from_dict(json.load(fh))
        eps_cf = doc["epsilon_charged"]
        eps_cf = math.inf if eps_cf == "inf" else float(eps_cf)
        return cls(emb, freqs, float(sigma0[0]), aux, ledger, float(doc["delta"]), eps_cf)


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _label_indices(features: np.ndarray, schema: Schema) -> np.ndarray:
    c, start, stop = schema.blocks()[-1]
    assert c.name == schema.label_column
    return np.argmax(features[:, start:stop], axis=1)


def prepare(data, schema: Schema, config: TrainConfig, rng: Rng) -> SanitizedRelease:
    """Steps that touch the private data: auxiliary releases, frequency draw,
    embedding and its one-shot sanitization.

    The privacy budget is verified before the data is read.
    """
    use_hist = config.label_hist_enabled and schema.label_count >= 2
    if config.nonprivate:
        sigma_cf = sigma_aux = 0.0
    else:
        plan = split_budget(config.budget, n_aux=2 if use_hist else 1)
        sigma_cf, sigma_aux = plan.sigma_cf, plan.sigma_aux

    features = data.features if isinstance(data, EncodedDataset) else np.asarray(data, dtype=np.float64)
    if isinstance(data, EncodedDataset) and data.schema_hash != schema.hash:
        raise InvalidParameter("dataset was encoded with a different schema")
    if features.ndim != 2 or features.shape[1] != schema.d_aug:
        raise InvalidParameter(f"data width {features.shape} does not match schema d_aug={schema.d_aug}")
    n, d = features.shape

    ledger = RdpLedger()
    noise_rng = rng.fork("dp-noise")
    releaser = AuxReleaser(ledger)
    releaser.release_mean_distance(features, sigma_aux, noise_rng.fork("aux-pairwise-mean"))
    if use_hist:
        releaser.release_label_histogram(_label_indices(features, schema), schema.label_count,
                                         sigma_aux, noise_rng.fork("aux-label-hist"))
    aux = releaser.result()

    sigma0 = aux.sigma0 * config.sigma0_scale
    base = SamplingDistribution.isotropic(d, sigma0)
    freqs = sample_frequencies(base, config.k, rng.fork("freqs"))
    raw = embed(features, freqs)
    sens = cf_sensitivity(config.k, n)
    cf_ledger = RdpLedger()
    if config.nonprivate:
        target = sanitize(raw, 0.0, noise_rng.fork("cf"), nonprivate=True)
        ledger.charge_nonprivate(sens, "cf-embedding")
        cf_ledger.charge_nonprivate(sens, "cf-embedding")
    else:
        target = sanitize(raw, sigma_cf, noise_rng.fork("cf"))
        ledger.charge_gaussian(sens, target.noise_std, "cf-embedding")
        cf_ledger.charge_gaussian(sens, target.noise_std, "cf-embedding")
    delta = config.budget.delta
    return SanitizedRelease(target, freqs, sigma0, aux, ledger, delta, to_eps_delta(cf_ledger, delta))


@dataclass
class TrainReport:
    weighted_loss: list = field(default_factory=list)
    cfd: list = field(default_factory=list)
    critic_log_std: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    epsilon: float = 0.0
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "weighted_loss": self.weighted_loss,
            "cfd": self.cfd,
            "final_critic_log_std": self.critic_log_std,
            "ledger": self.ledger,
            "epsilon": "inf" if self.epsilon == math.inf else self.epsilon,
            "wall_clock": self.wall_clock,
        }


def sample_labels(m: int, label_count: int, rng: Rng, label_probs=None) -> np.ndarray | None:
    if label_count == 0:
        return None
    if label_probs is None:
        return rng.generator.integers(0, label_count, size=m)
    probs = np.asarray(label_probs, dtype=np.float64)
    if probs.shape != (label_count,):
        raise InvalidParameter("label_probs length does not match label count")
    return rng.generator.choice(label_count, size=m, p=probs / probs.sum())


def _latent_batch(net: GeneratorNet, size: int, rng: Rng, label_probs) -> LatentBatch:
    z = rng.generator.standard_normal(size=(size, net.latent_dim))
    return LatentBatch(z, sample_labels(size, net.label_count, rng, label_probs))


class _Trainer:
    def __init__(self, release: SanitizedRelease, schema: Schema, config: TrainConfig, rng: Rng):
        if release.target.freq_hash != release.freqs.hash:
            raise InvalidParameter("target embedding does not belong to the released frequencies")
        if release.freqs.dim != schema.d_aug:
            raise InvalidParameter("release dimension does not match the schema")
        self.release = release
        self.config = config
        self.net = init_generator(schema, config.latent_dim, config.hidden_dims, None, rng.fork("init"))
        self.latent_rng = rng.fork("latent")
        self.base = SamplingDistribution.isotropic(release.freqs.dim, release.sigma0)
        self.critic = self.base
        lo, hi = config.clamp_range
        self.log_std_bounds = (math.log(lo * release.sigma0), math.log(hi * release.sigma0))
        self.gen_adam = {k: AdamState.fresh(v.shape, lr=config.lr_gen) for k, v in self.net.params.items()}
        self.critic_adam = AdamState.fresh((release.freqs.dim,), lr=config.lr_critic)
        self.iteration = 0
        self.report = TrainReport()
        self.ledger_text = release.ledger.dumps()

    def weights(self) -> np.ndarray:
        if not self.config.critic_enabled:
            return np.ones(self.release.freqs.k)
        return importance_weights(self.critic, self.base, self.release.freqs, self.config.normalize_weights)

    def generator_step(self, weights):
        net = self.net.train()
        out = net.forward(_latent_batch(net, self.config.batch_size, self.latent_rng, self.release.aux.label_probs))
        grads = net.backward(loss_grad_points(self.release.target, out, self.release.freqs, weights))
        for name, g in grads.items():
            net.params[name], self.gen_adam[name] = adam_step(self.gen_adam[name], net.params[name], g)

    def critic_step(self):
        net = self.net.train()
        out = net.forward(_latent_batch(net, self.config.batch_size, self.latent_rng, self.release.aux.label_probs))
        gen_emb = embed(out, self.release.freqs)
        weights = self.weights()
        self.report.weighted_loss.append(weighted_cfd(self.release.target, gen_emb, weights).value)
        self.report.cfd.append(cfd(self.release.target, gen_emb).value)
        if self.config.critic_enabled:
            self.critic_update(gen_emb)

    def critic_update(self, gen_emb: CfEmbedding):
        """One clamped Adam ascent step on the weighted loss at a fixed generator embedding."""
        g = loss_grad_logstd(self.release.target, gen_emb, self.release.freqs, self.critic, self.base,
                             self.config.normalize_weights)
        log_std, self.critic_adam = adam_step(self.critic_adam, self.critic.log_std, g, maximize=True)
        self.critic = SamplingDistribution(np.clip(log_std, *self.log_std_bounds))

    def check_ledger(self):
        if self.release.ledger.dumps() != self.ledger_text:
            raise InvalidState("privacy ledger changed during training")

    def run(self, checkpoint_path=None):
        cfg = self.config
        every = cfg.checkpoint_every or max(1, cfg.iterations // 20)
        started = time.perf_counter()
        while self.iteration < cfg.iterations:
            try:
                weights = self.weights()
                for _ in range(cfg.n_gen):
                    self.generator_step(weights)
                self.critic_step()
            except NumericFailure as exc:
                raise NumericFailure(f"iteration {self.iteration}: {exc}") from exc
            self.iteration += 1
            if self.iteration % every == 0:
                self.check_ledger()
                if checkpoint_path is not None:
                    _write_json(checkpoint_path, self.checkpoint())
                log.debug("iter %d weighted=%.6g cfd=%.6g", self.iteration,
                          self.report.weighted_loss[-1], self.report.cfd[-1])
        self.check_ledger()
        if checkpoint_path is not None:
            _write_json(checkpoint_path, self.checkpoint())
        self.report.critic_log_std = self.critic.log_std.tolist()
        self.report.ledger = self.release.ledger.to_dict(self.release.delta)
        self.report.epsilon = self.release.epsilon
        self.report.wall_clock += time.perf_counter() - started
        self.net.eval()
        return self.net, self.report

    def checkpoint(self) -> dict:
        doc = self.net.to_dict(self.config.to_dict())
        doc["tool_version"] = __version__
        doc["train_state"] = {
            "iteration": self.iteration,
            "freq_hash": self.release.freqs.hash,
            "critic_log_std": self.critic.log_std.tolist(),
            "critic_adam": self.critic_adam.to_dict(),
            "gen_adam": {k: v.to_dict() for k, v in self.gen_adam.items()},
            "latent_rng": self.latent_rng.get_state(),
            "weighted_loss": list(self.report.weighted_loss),
            "cfd": list(self.report.cfd),
        }
        return doc

    def restore(self, doc: dict):
        state = doc["train_state"]
        if state["freq_hash"] != self.release.freqs.hash:
            raise InvalidParameter("checkpoint was trained against a different frequency draw")
        net = GeneratorNet.from_dict(doc)
        self.net.params, self.net.running = net.params, net.running
        self.iteration = int(state["iteration"])
        self.critic = SamplingDistribution(np.asarray(state["critic_log_std"]))
        self.critic_adam = AdamState.from_dict(state["critic_adam"])
        self.gen_adam = {k: AdamState.from_dict(v) for k, v in state["gen_adam"].items()}
        self.latent_rng.set_state(state["latent_rng"])
        self.report.weighted_loss = list(state["weighted_loss"])
        self.report.cfd = list(state["cfd"])


def train(release: SanitizedRelease, schema: Schema, config: TrainConfig, rng: Rng,
          checkpoint_path=None, resume: dict | None = None):
    """Generator/critic alternation against the sanitized target.

    Takes no data argument: training is post-processing of the release.
    Returns ``(net, report)`` with the net in eval mode.
    """
    trainer = _Trainer(release, schema, config, rng)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run(checkpoint_path)


def run(data, schema: Schema, config: TrainConfig, rng: Rng, checkpoint_path=None):
    """Full pipeline: :func:`prepare` then :func:`train`."""
    release = prepare(data, schema, config, rng)
    data = None  # noqa: F841  the raw data must be unreachable from here on
    return train(release, schema, config, rng, checkpoint_path=checkpoint_path)


def generate_encoded(net: GeneratorNet, m: int, rng: Rng, label_probs=None) -> np.ndarray:
    if m < 0:
        raise InvalidParameter("m must be >= 0")
    if m == 0:
        return np.zeros((0, net.output_dim))
    net.eval()
    return net.forward(_latent_batch(net, m, rng, label_probs))


def generate(net: GeneratorNet, m: int, rng: Rng, label_probs=None) -> list:
    """``m`` decoded synthetic records drawn i.i.d. from the generator."""
    return decode_batch(generate_encoded(net, m, rng, label_probs), net.schema)
