import json
import math

import numpy as np
import pytest

from cfsynth.cfembed import (CfEmbedding, cf_sensitivity, cfd, embed, embedding_from_dict, embedding_to_dict,
                             load_embedding, loss_grad_logstd, loss_grad_points, sanitize, save_embedding,
                             weighted_cfd)
from cfsynth.errors import InvalidArtifact, InvalidParameter, InvalidState
from cfsynth.freqdist import (FrequencyMatrix, SamplingDistribution, importance_weights, sample_frequencies)
from cfsynth.numcore import Rng


def _freqs(k, d, seed=0, std=1.0):
    return sample_frequencies(SamplingDistribution.isotropic(d, std), k, Rng(seed))


def test_single_zero_record():
    f = _freqs(7, 3)
    e = embed(np.zeros((1, 3)), f)
    assert np.array_equal(e.re, np.ones(7))
    assert np.array_equal(e.im, np.zeros(7))


def test_two_point_average_cancels():
    f = FrequencyMatrix(np.array([[1.0]]))
    e = embed(np.array([[0.0], [math.pi]]), f)
    assert e.re[0] == pytest.approx(0.0, abs=1e-15)
    assert e.im[0] == pytest.approx(0.0, abs=1e-15)


def test_embedding_matches_complex_oracle():
    rng = np.random.default_rng(1)
    x = rng.random((40, 3))
    f = _freqs(11, 3)
    phi = np.exp(1j * x @ f.freqs.T).mean(axis=0)
    e = embed(x, f)
    assert np.allclose(e.re, phi.real, atol=1e-14)
    assert np.allclose(e.im, phi.imag, atol=1e-14)


def test_norm_bound():
    rng = np.random.default_rng(2)
    for _ in range(20):
        k = int(rng.integers(1, 50))
        e = embed(rng.normal(size=(int(rng.integers(1, 30)), 2)), _freqs(k, 2, int(rng.integers(1000))))
        assert e.norm() <= math.sqrt(k) + 1e-12


@pytest.mark.parametrize("k, n, expected", [(1, 2, 1.0), (4, 100, 0.04)])
def test_sensitivity_values(k, n, expected):
    assert cf_sensitivity(k, n) == pytest.approx(expected, rel=1e-15)


def test_sensitivity_attained_by_phase_pair():
    # one record at phase 0, its replacement at phase pi
    f = FrequencyMatrix(np.array([[1.0]]))
    n = 3
    base = np.array([[0.3], [1.7]])
    a = embed(np.vstack([base, [[0.0]]]), f)
    b = embed(np.vstack([base, [[math.pi]]]), f)
    change = math.hypot(a.re[0] - b.re[0], a.im[0] - b.im[0])
    assert abs(change - 2.0 / n) < 1e-12


def test_sensitivity_never_exceeded():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n, d, k = (int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        f = FrequencyMatrix(rng.normal(0, 3, (k, d)))
        x = rng.normal(0, 2, (n, d))
        y = x.copy()
        y[rng.integers(n)] = rng.normal(0, 2, d)
        a, b = embed(x, f), embed(y, f)
        change = np.sqrt(np.sum((a.re - b.re) ** 2 + (a.im - b.im) ** 2))
        assert change <= cf_sensitivity(k, n) + 1e-12


def test_sanitize_is_reproducible_from_fork():
    f = _freqs(5, 2)
    e = embed(np.random.default_rng(0).random((10, 2)), f)
    s = sanitize(e, 1000.0, Rng(4).fork("cf"))
    noise = Rng(4).fork("cf").generator.normal(0, cf_sensitivity(5, 10) * 1000.0, 10)
    assert np.array_equal(s.re, e.re + noise[:5])
    assert np.array_equal(s.im, e.im + noise[5:])
    assert s.sanitized and s.noise_std == pytest.approx(cf_sensitivity(5, 10) * 1000.0)


def test_sanitize_noise_scale():
    f = _freqs(3, 1)
    e = embed(np.zeros((50, 1)), f)
    sigma = 2.0
    samples = np.array([np.concatenate([s.re - e.re, s.im - e.im])
                        for s in (sanitize(e, sigma, Rng(0).fork(str(i))) for i in range(10**4))])
    expected = cf_sensitivity(3, 50) * sigma
    assert np.all(np.abs(samples.std(axis=0) / expected - 1) < 0.02)


def test_large_n_noise_is_small():
    assert cf_sensitivity(1000, 10**6) * 5 == pytest.approx(3.162e-4, rel=1e-3)


def test_sanitize_one_shot_and_preconditions():
    e = embed(np.zeros((2, 1)), _freqs(2, 1))
    s = sanitize(e, 1.0, Rng(0))
    with pytest.raises(InvalidState):
        sanitize(s, 1.0, Rng(0))
    with pytest.raises(InvalidParameter):
        sanitize(e, 0.0, Rng(0))
    with pytest.raises(InvalidParameter):
        sanitize(e, 1.0, Rng(0), nonprivate=True)


def test_nonprivate_sanitize_is_identity():
    e = embed(np.random.default_rng(0).random((4, 2)), _freqs(3, 2))
    s = sanitize(e, 0.0, Rng(0), nonprivate=True)
    assert np.array_equal(s.re, e.re) and np.array_equal(s.im, e.im)
    assert s.sanitized and s.noise_std == 0.0


def test_cfd_basic_values():
    f = FrequencyMatrix(np.array([[1.0]]))
    a = CfEmbedding(np.array([1.0]), np.array([0.0]), 1, f.hash)
    b = CfEmbedding(np.array([0.0]), np.array([0.0]), 1, f.hash)
    assert cfd(a, b).value == 1.0
    assert cfd(a, a).value == 0.0
    assert cfd(a, b).value == cfd(b, a).value


def test_weighted_cfd_identities():
    rng = np.random.default_rng(5)
    f = _freqs(6, 2)
    a, b = embed(rng.random((8, 2)), f), embed(rng.random((9, 2)), f)
    assert weighted_cfd(a, b, np.ones(6)).value == pytest.approx(6 * cfd(a, b).value, rel=1e-15)
    one_hot = np.zeros(6)
    one_hot[2] = 1.0
    assert weighted_cfd(a, b, one_hot).value == cfd(a, b).per_frequency[2]
    assert weighted_cfd(a, a, rng.random(6)).value == 0.0


def test_mixed_frequency_draws_rejected():
    a = embed(np.zeros((1, 1)), _freqs(3, 1, seed=0))
    b = embed(np.zeros((1, 1)), _freqs(3, 1, seed=1))
    with pytest.raises(InvalidParameter):
        cfd(a, b)


def test_grad_zero_at_exact_match():
    f = _freqs(5, 2)
    pts = np.random.default_rng(0).random((7, 2))
    target = embed(pts, f)
    assert np.allclose(loss_grad_points(target, pts, f, np.ones(5)), 0.0, atol=1e-15)


def test_grad_points_hand_derivative():
    t, g, a, b = 1.3, 0.4, 0.2, -0.1
    f = FrequencyMatrix(np.array([[t]]))
    target = CfEmbedding(np.array([a]), np.array([b]), 1, f.hash)
    c, d = math.cos(t * g), math.sin(t * g)
    expected = 2 * (c - a) * (-math.sin(t * g)) * t + 2 * (d - b) * math.cos(t * g) * t
    got = loss_grad_points(target, np.array([[g]]), f, np.ones(1))
    assert got[0, 0] == pytest.approx(expected, rel=1e-14)


def _weighted_loss(target, pts, f, w):
    return weighted_cfd(target, embed(pts, f), w).value


@pytest.mark.parametrize("seed", range(5))
def test_grad_points_finite_differences(seed):
    rng = np.random.default_rng(seed)
    B, d, k = 6, 3, 8
    f = _freqs(k, d, seed)
    target = embed(rng.random((20, d)), f)
    pts = rng.random((B, d))
    w = rng.random(k) + 0.1
    analytic = loss_grad_points(target, pts, f, w)
    numeric = np.empty_like(pts)
    h = 1e-6
    for i in range(B):
        for j in range(d):
            up, down = pts.copy(), pts.copy()
            up[i, j] += h
            down[i, j] -= h
            numeric[i, j] = (_weighted_loss(target, up, f, w) - _weighted_loss(target, down, f, w)) / (2 * h)
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-5


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("normalize", [True, False])
def test_grad_logstd_finite_differences(seed, normalize):
    rng = np.random.default_rng(seed)
    d, k = 2, 12
    base = SamplingDistribution.isotropic(d, 1.5)
    critic = SamplingDistribution(base.log_std + rng.normal(0, 0.3, d))
    f = sample_frequencies(base, k, Rng(seed))
    target, gen = embed(rng.random((15, d)), f), embed(rng.random((10, d)), f)

    def loss(log_std):
        return weighted_cfd(target, gen, importance_weights(SamplingDistribution(log_std), base, f,
                                                            normalize)).value

    analytic = loss_grad_logstd(target, gen, f, critic, base, normalize)
    numeric = np.empty(d)
    h = 1e-6
    for j in range(d):
        up, down = critic.log_std.copy(), critic.log_std.copy()
        up[j] += h
        down[j] -= h
        numeric[j] = (loss(up) - loss(down)) / (2 * h)
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-5


def test_grad_logstd_zero_cases():
    base = SamplingDistribution.isotropic(2, 1.0)
    critic = SamplingDistribution(np.array([0.3, -0.2]))
    f = sample_frequencies(base, 9, Rng(0))
    a = embed(np.random.default_rng(0).random((5, 2)), f)
    assert np.allclose(loss_grad_logstd(a, a, f, critic, base), 0.0)
    # constant per-frequency error with normalized weights
    b = CfEmbedding(a.re + 0.1, a.im, a.n_source, a.freq_hash)
    assert np.allclose(loss_grad_logstd(a, b, f, critic, base, normalize=True), 0.0, atol=1e-14)


def test_embedding_json_roundtrip(tmp_path):
    f = _freqs(4, 2)
    e = sanitize(embed(np.random.default_rng(0).random((6, 2)), f), 3.0, Rng(1))
    doc = embedding_to_dict(e, f, 0.7, 0.5, 1e-5)
    path = tmp_path / "emb.json"
    save_embedding(path, doc)
    back, freqs, sigma0, raw = load_embedding(path)
    assert np.array_equal(back.re, e.re) and np.array_equal(back.im, e.im)
    assert np.array_equal(freqs.freqs, f.freqs)
    assert raw["epsilon_charged"] == 0.5


def test_embedding_json_inf_sentinel_and_tamper():
    f = _freqs(2, 1)
    e = sanitize(embed(np.zeros((3, 1)), f), 0.0, Rng(0), nonprivate=True)
    doc = embedding_to_dict(e, f, 1.0, math.inf, 1e-5)
    assert json.loads(json.dumps(doc))["epsilon_charged"] == "inf"
    doc["freqs"][0][0] += 1.0
    with pytest.raises(InvalidArtifact):
        embedding_from_dict(doc)
    with pytest.raises(InvalidArtifact):
        embedding_from_dict({"version": 1})
