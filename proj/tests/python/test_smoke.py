import json
import math

import numpy as np
import pytest

import groupdiff as gd


def test_attention_two_token_oracle():
    q = np.array([[1.0, 0.0], [0.0, 0.0]])
    k = np.array([[1.0, 0.0], [-1.0, 0.0]])
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    out, w = gd.scaled_dot_attention(q, k, v)
    a = 1.0 / (1.0 + math.exp(-2.0 / math.sqrt(2.0)))
    np.testing.assert_allclose(w[0], [a, 1.0 - a], atol=1e-12)
    np.testing.assert_allclose(w[1], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(out, w @ v, atol=1e-12)


def test_group_attention_matches_flattened_softmax():
    rng = np.random.default_rng(0)
    n, L, c = 2, 3, 4
    q, k, v = (rng.standard_normal((n, L, c)) for _ in range(3))
    out, blocks = gd.group_attention(q, k, v, heads=1, group_size=n)
    qf, kf, vf = (x.reshape(n * L, c) for x in (q, k, v))
    s = qf @ kf.T / math.sqrt(c)
    w = np.exp(s - s.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.reshape(n * L, c), w @ vf, atol=1e-12)
    assert len(blocks) == 1
    np.testing.assert_allclose(blocks[0].sum(axis=1), np.ones(n), atol=1e-12)


def test_dataset_and_index():
    ds = gd.generate_dataset(num_classes=3, images_per_class=6, image_size=8, seed=1)
    px = ds.pixels()
    assert px.shape == (18, 8, 8, 3)
    assert px.min() >= 0.0 and px.max() <= 1.0
    assert sorted(set(ds.labels)) == [0, 1, 2]
    idx = gd.build_index(ds, 0.7)
    ids, mode, padded = gd.assemble_group(ds.ids[0], idx, 4)
    assert len(ids) == 4 and ids[0] == ds.ids[0]
    assert mode in ("similarity", "class", "random")


def test_schedule_and_cfg():
    s = gd.NoiseSchedule.scaled_linear(100)
    ab = np.array(s.alpha_bars)
    assert np.all(np.diff(ab) < 0)
    assert gd.cfg_combine(np.array([1.0]), np.array([0.0]), 1.5)[0] == pytest.approx(2.5)
    ts = gd.sample_group_timesteps(8, 10, s, 3)
    assert max(ts) - min(ts) <= 20


def test_denoiser_generate_and_metrics():
    d = gd.Denoiser(depth=1, hidden=8, heads=2, num_classes=3, image_size=8, max_group=4, seed=2)
    sched = gd.NoiseSchedule.scaled_linear(20)
    x = np.random.default_rng(1).standard_normal((2, 8, 8, 3))
    eps = d.forward(x, [5, 5], [0, 1])
    np.testing.assert_array_equal(eps, np.zeros_like(x))
    images, records = gd.generate(d, sched, mode="groupdiff_f", steps=3, group_size=3, capture=True)
    assert images.shape == (3, 8, 8, 3)
    assert records and records[0]["mass"].shape == (3, 3)
    assert gd.cross_sample_score([0.4, 0.1, 0.1]) == pytest.approx(0.5)
    assert gd.aggregate_s_cross([np.array([[0.7, 0.3], [0.4, 0.6]])]) == 0.0


def test_frechet_and_errors():
    assert gd.frechet_distance([0.0], np.array([[1.0]]), [2.0], np.array([[1.0]])) == pytest.approx(4.0)
    with pytest.raises(gd.ValidationError):
        gd.generate_dataset(num_classes=1)
    with pytest.raises(gd.Error):
        gd.normalize_run_config('{"version": 1, "unknown": 0}')


def test_run_config_round_trip():
    text = gd.default_run_config()
    cfg = json.loads(text)
    assert cfg["version"] == 1
    assert gd.normalize_run_config(text) == text
