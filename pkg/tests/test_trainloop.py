import inspect
import json
import math

import numpy as np
import pytest

from cfsynth.cfembed import embed, weighted_cfd
from cfsynth.dataio import Column, Schema, encode
from cfsynth.errors import InvalidParameter, PrivacyBudgetError
from cfsynth.numcore import Rng
from cfsynth.privacy import DpBudget
from cfsynth.toydata import gaussian_mixture_2d, mixture_schema
from cfsynth.trainloop import (SanitizedRelease, TrainConfig, _latent_batch, _Trainer, generate, generate_encoded,
                               nonprivate_mode, prepare, run, sample_labels, train)

SMALL = dict(k=40, iterations=0, n_gen=1, batch_size=64, latent_dim=4, hidden_dims=(16,))


def _toy(n=400, seed=1):
    return gaussian_mixture_2d(n, Rng(seed)), mixture_schema()


def _labeled():
    s = Schema((Column("x", "continuous", 0.0, 1.0), Column("y", "categorical", categories=("a", "b", "c"))),
               label_column="y")
    rng = np.random.default_rng(0)
    labels = rng.choice(3, 500, p=[0.6, 0.3, 0.1])
    rows = [[repr(rng.random()), "abc"[c]] for c in labels]
    return encode(rows, s), s


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.k, cfg.iterations, cfg.batch_size, cfg.n_gen) == (1000, 8000, 1100, 5)
    assert cfg.lr_gen == cfg.lr_critic == 0.01
    assert cfg.budget == DpBudget(1.0, 1e-5, 0.5)
    assert cfg.normalize_weights and cfg.critic_enabled
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_config_validation():
    with pytest.raises(InvalidParameter):
        TrainConfig(k=0)
    with pytest.raises(InvalidParameter):
        TrainConfig(clamp_range=(2.0, 10.0))


def test_zero_iterations_is_noop_training():
    data, s = _toy()
    net, report = run(data, s, TrainConfig(**SMALL), Rng(0))
    assert report.cfd == [] and report.weighted_loss == []
    labels = [e["label"] for e in report.ledger["events"]]
    assert labels == ["aux-pairwise-mean", "cf-embedding"]
    assert net.mode == "eval"


def test_train_signature_has_no_data_argument():
    assert "data" not in inspect.signature(train).parameters


def test_ledger_untouched_by_training():
    data, s = _toy()
    cfg = TrainConfig(**{**SMALL, "iterations": 30})
    release = prepare(data, s, cfg, Rng(0))
    before = release.ledger.dumps(release.delta)
    eps_before = release.epsilon
    _, report = train(release, s, cfg, Rng(0))
    assert release.ledger.dumps(release.delta) == before
    assert report.epsilon == eps_before


def test_release_epsilon_within_budget():
    data, s = _toy()
    release = prepare(data, s, TrainConfig(**SMALL), Rng(0))
    assert 0 < release.epsilon <= 1.0


def test_budget_checked_before_data_is_read():
    class Exploding:
        def __getattr__(self, name):
            raise AssertionError("data was touched")

    cfg = TrainConfig(**{**SMALL, "budget": DpBudget(1e-4, 1e-5)})
    with pytest.raises(PrivacyBudgetError):
        prepare(Exploding(), mixture_schema(), cfg, Rng(0))


def test_unit_weights_without_critic():
    data, s = _toy()
    cfg = TrainConfig(**{**SMALL, "iterations": 15, "critic_enabled": False})
    _, report = run(data, s, cfg, Rng(0))
    for w, c in zip(report.weighted_loss, report.cfd):
        assert w == pytest.approx(cfg.k * c, rel=1e-12)


def test_critic_ascent_does_not_decrease_weighted_loss():
    data, s = _toy()
    violations = 0
    for seed in range(20):
        cfg = TrainConfig(**{**SMALL, "lr_critic": 1e-4})
        release = prepare(data, s, cfg, Rng(seed))
        trainer = _Trainer(release, s, cfg, Rng(seed))
        out = trainer.net.train().forward(_latent_batch(trainer.net, 128, Rng(seed), None))
        gen = embed(out, release.freqs)
        before = weighted_cfd(release.target, gen, trainer.weights()).value
        trainer.critic_update(gen)
        after = weighted_cfd(release.target, gen, trainer.weights()).value
        violations += after < before
    assert violations <= 2


def test_run_is_deterministic():
    data, s = _toy()
    cfg = TrainConfig(**{**SMALL, "iterations": 10})
    a, ra = run(data, s, cfg, Rng(3))
    b, rb = run(data, s, cfg, Rng(3))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert ra.cfd == rb.cfd


def test_resume_matches_uninterrupted(tmp_path):
    data, s = _toy()
    cfg = TrainConfig(**{**SMALL, "iterations": 10})
    release = prepare(data, s, cfg, Rng(4))
    full, _ = train(release, s, cfg, Rng(4))
    half_cfg = TrainConfig(**{**SMALL, "iterations": 5})
    ckpt = tmp_path / "ckpt.json"
    train(release, s, half_cfg, Rng(4), checkpoint_path=ckpt)
    resumed, report = train(release, s, cfg, Rng(4), resume=json.loads(ckpt.read_text()))
    assert len(report.cfd) == 10
    for k in full.params:
        assert np.array_equal(full.params[k], resumed.params[k]), k


def test_resume_rejects_other_frequency_draw(tmp_path):
    data, s = _toy()
    cfg = TrainConfig(**{**SMALL, "iterations": 2})
    ckpt = tmp_path / "ckpt.json"
    train(prepare(data, s, cfg, Rng(0)), s, cfg, Rng(0), checkpoint_path=ckpt)
    with pytest.raises(InvalidParameter):
        train(prepare(data, s, cfg, Rng(1)), s, cfg, Rng(1), resume=json.loads(ckpt.read_text()))


def test_release_save_load_roundtrip(tmp_path):
    data, s = _toy()
    release = prepare(data, s, TrainConfig(**SMALL), Rng(0))
    paths = release.save(tmp_path, {"note": "x"})
    back = SanitizedRelease.load(paths["embedding"], paths["aux"], paths["ledger"])
    assert np.array_equal(back.target.re, release.target.re)
    assert back.freqs.hash == release.freqs.hash
    assert back.epsilon == release.epsilon


def test_generate_empty_and_deterministic():
    data, s = _toy()
    net, _ = run(data, s, TrainConfig(**{**SMALL, "iterations": 3}), Rng(0))
    assert generate(net, 0, Rng(1)) == []
    assert generate_encoded(net, 0, Rng(1)).shape == (0, 2)
    assert generate(net, 20, Rng(5)) == generate(net, 20, Rng(5))


def test_generated_labels_follow_probs():
    probs = np.array([0.6, 0.3, 0.1])
    m = 20000
    labels = sample_labels(m, 3, Rng(0), probs)
    freq = np.bincount(labels, minlength=3) / m
    assert np.all(np.abs(freq - probs) <= 3 * np.sqrt(probs * (1 - probs) / m))


def test_label_histogram_release_and_conditional_generation():
    data, s = _labeled()
    cfg = TrainConfig(**{**SMALL, "iterations": 2, "label_hist_enabled": True})
    release = prepare(data, s, cfg, Rng(0))
    assert [e["label"] for e in release.ledger.events] == ["aux-pairwise-mean", "aux-label-hist",
                                                           "cf-embedding"]
    assert release.epsilon <= 1.0
    net, _ = train(release, s, cfg, Rng(0))
    records = generate(net, 3000, Rng(1), release.aux.label_probs)
    counts = np.bincount(["abc".index(r[1]) for r in records], minlength=3) / 3000
    assert np.allclose(counts, release.aux.label_probs, atol=0.05)


def test_nonprivate_mode():
    data, s = _toy()
    cfg = nonprivate_mode(TrainConfig(**SMALL))
    release = prepare(data, s, cfg, Rng(0))
    raw = embed(data, release.freqs)
    assert np.array_equal(release.target.re, raw.re) and np.array_equal(release.target.im, raw.im)
    assert release.epsilon == math.inf
    assert json.loads(release.ledger.dumps(release.delta))["converted"]["epsilon"] == "inf"


def test_toy_nonprivate_cfd_drops_tenfold():
    data, s = _toy(2000)
    cfg = nonprivate_mode(TrainConfig(k=200, iterations=300, n_gen=1, batch_size=256, latent_dim=8,
                                      hidden_dims=(32, 32), critic_enabled=False))
    _, report = run(data, s, cfg, Rng(0))
    assert np.mean(report.cfd[-10:]) < 0.1 * report.cfd[0]


def test_nonprivate_beats_private():
    data, s = _toy(2000)
    base = dict(k=100, iterations=150, n_gen=1, batch_size=256, latent_dim=8, hidden_dims=(32,))
    _, private = run(data, s, TrainConfig(**base, budget=DpBudget(0.2, 1e-5)), Rng(0))
    _, clean = run(data, s, nonprivate_mode(TrainConfig(**base)), Rng(0))
    assert np.mean(clean.cfd[-10:]) <= np.mean(private.cfd[-10:])
