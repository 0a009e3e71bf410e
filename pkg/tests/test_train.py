import csv
import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radlab import bidr, data, train as T
from radlab import colorspace as cs
from radlab.field import FieldNumericError, GridConfig, ModelConfig, load_checkpoint
from radlab.render import Camera
from radlab.train import (
    Adam,
    TrainConfig,
    charbonnier,
    charbonnier_grad,
    lr_schedule,
    psnr,
    sample_batch,
    tv_grad,
    tv_regularizer,
)

# sqrt(0.1^2 + 1e-6) at 40 digits
CHARB_TENTH = float(mpmath.sqrt(mpmath.mpf("0.01") + mpmath.mpf("1e-6")))


def test_charbonnier_examples():
    assert charbonnier(np.full(3, 0.4), np.full(3, 0.4)) == pytest.approx(1e-3, abs=1e-15)
    assert charbonnier([0.1], [0.0]) == pytest.approx(CHARB_TENTH, abs=1e-15)
    assert CHARB_TENTH == pytest.approx(0.1000049998750062, abs=1e-16)
    with pytest.raises(ValueError):
        charbonnier([0.1], [0.0], eps=0.0)


@given(st.integers(0, 10_000))
def test_charbonnier_grad_matches_fd(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.random(12), rng.random(12)
    grad = charbonnier_grad(p, g)
    h = 1e-7
    fd = np.array([(charbonnier(p + e, g) - charbonnier(p - e, g)) / (2 * h) for e in np.eye(12) * h])
    np.testing.assert_allclose(grad, fd, atol=1e-6)


@pytest.mark.parametrize("r", [2, 3, 5])
def test_tv_unit_step(r):
    g = np.zeros((r, r, r, 1))
    g[r // 2 :, ...] = 1.0
    assert tv_regularizer(g) == pytest.approx(1 / (3 * (r - 1)), abs=1e-15)


def test_tv_constant_grid_and_none():
    assert tv_regularizer(np.full((4, 4, 4, 2), 0.7)) == 0.0
    assert tv_regularizer(None) == 0.0


def _tv_brute(g):
    r = g.shape[0]
    total, pairs = 0.0, 0
    for i in range(r):
        for j in range(r):
            for k in range(r):
                for di, dj, dk in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
                    a, b, c = i + di, j + dj, k + dk
                    if a < r and b < r and c < r:
                        total += float(np.sum((g[a, b, c] - g[i, j, k]) ** 2))
                        pairs += g.shape[-1]
    return total / pairs


@settings(max_examples=10)
@given(st.integers(0, 1000), st.integers(2, 4), st.integers(1, 3))
def test_tv_matches_enumeration(seed, r, f):
    g = np.random.default_rng(seed).normal(size=(r, r, r, f))
    assert tv_regularizer(g) == pytest.approx(_tv_brute(g), rel=1e-12)


def test_tv_grad_matches_fd():
    g = np.random.default_rng(0).normal(size=(3, 3, 3, 2))
    grad = tv_grad(g)
    h = 1e-6
    fd = np.empty_like(g)
    for idx in np.ndindex(g.shape):
        a, b = g.copy(), g.copy()
        a[idx] += h
        b[idx] -= h
        fd[idx] = (tv_regularizer(a) - tv_regularizer(b)) / (2 * h)
    np.testing.assert_allclose(grad, fd, atol=1e-8)


def test_lr_schedule_examples():
    cfg = TrainConfig(iterations=1000)
    assert lr_schedule(0, cfg) == pytest.approx(0.01, abs=1e-18)
    assert lr_schedule(1000, cfg) == pytest.approx(0.001, abs=1e-17)
    assert lr_schedule(500, cfg) == pytest.approx(0.0031622776601683794, abs=1e-16)
    with pytest.raises(ValueError):
        lr_schedule(1001, cfg)


@given(st.integers(1, 5000), st.data())
def test_lr_schedule_monotone(iters, d):
    cfg = TrainConfig(iterations=iters)
    a = d.draw(st.integers(0, iters - 1))
    assert lr_schedule(a + 1, cfg) <= lr_schedule(a, cfg)
    assert 0.001 - 1e-15 <= lr_schedule(a, cfg) <= 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_start=0.001, lr_end=0.01)
    assert TrainConfig().resolved_tv(ModelConfig(grid=GridConfig(512, 2))) == 0.01
    assert TrainConfig().resolved_tv(ModelConfig()) == 0.0
    assert TrainConfig(tv_weight=0.5).resolved_tv(ModelConfig()) == 0.5


def test_psnr_examples():
    a = np.random.default_rng(0).random((4, 4, 3))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros(10), np.full(10, 0.1)) == pytest.approx(20.0, abs=1e-12)
    assert psnr(np.zeros(4), np.full(4, 0.5)) == pytest.approx(6.020599913279624, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def test_adam_decreases_one_parameter_loss():
    x = np.array([3.0])
    opt = Adam(1)
    losses = []
    for _ in range(200):
        losses.append(float(x[0] ** 2))
        opt.step(x, 2 * x, 0.05)
    assert losses[-1] < 1e-3 * losses[0]


def test_adam_first_step_size_is_lr():
    # bias correction makes the first update exactly lr * sign(grad) (up to eps)
    x = np.array([1.0, -2.0])
    Adam(2).step(x, np.array([0.3, -7.0]), 0.1)
    np.testing.assert_allclose(x, [0.9, -1.9], atol=1e-7)


def _toy_dataset(views=3, size=8):
    cams = [Camera(size, size, size, data.look_at([0.4 * i - 0.4, 0.2, 2.5]), 1.0, 4.0) for i in range(views)]
    imgs = np.random.default_rng(0).random((views, size, size, 3))
    train, held = data.holdout_split(views, every=3)
    return data.Dataset(imgs, cams, cs.LINEAR, train, held)


def test_sample_batch_uniform_over_training_pixels():
    ds = _toy_dataset(views=5, size=4)
    n = 100_000
    v, r, c, gt = sample_batch(ds, n, np.random.default_rng(1))
    assert set(np.unique(v)) <= set(ds.train)
    counts = np.zeros((5, 4, 4))
    np.add.at(counts, (v, r, c), 1)
    cells = len(ds.train) * 16
    p = 1 / cells
    sd = math.sqrt(n * p * (1 - p))
    sel = counts[ds.train]
    assert np.all(np.abs(sel - n * p) < 3 * sd)
    np.testing.assert_array_equal(gt, ds.srgb()[v, r, c])


def test_sample_batch_deterministic():
    ds = _toy_dataset()
    a = sample_batch(ds, 64, np.random.default_rng(5))
    b = sample_batch(ds, 64, np.random.default_rng(5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def _constant_dataset(color=(0.4, 0.25, 0.15), size=8):
    box = bidr.Primitive("box", (0, 0, 0), (0.9, 0.9, 0.9), bidr.Material((1.0, 1.0, 1.0)))
    illum = bidr.Illumination((0.1, 0.1, 0.1), np.array(color) - 0.1)
    scene = bidr.Scene((box,), illum, bidr.ShadowField("constant", value=1.0))
    cam = Camera(size, size, size, data.look_at([0, 0, 2.5]), 1.0, 4.0)
    return data.synthetic_dataset(scene, [cam], cs.LINEAR)


SMALL = ModelConfig(mlp_width=16, pe_frequencies=2, grid=GridConfig(256, 2))
QUICK = TrainConfig(iterations=30, batch_rays=64, samples_per_ray=8, eval_every=10)


def test_constant_scene_fits():
    ds = _constant_dataset()
    np.testing.assert_allclose(ds.linear(), np.broadcast_to([0.4, 0.25, 0.15], ds.images.shape), atol=1e-4)
    _, rep = T.train(ds, SMALL, TrainConfig(iterations=150, batch_rays=64, samples_per_ray=8, eval_every=50))
    assert rep.final_psnr > 25.0
    assert rep.records[-1].psnr > rep.records[0].psnr


def test_training_is_deterministic():
    ds = _toy_dataset()
    _, a = T.train(ds, SMALL, QUICK)
    _, b = T.train(ds, SMALL, QUICK)
    assert a.curve() == b.curve()
    _, c = T.train(ds, SMALL, TrainConfig(**{**QUICK.__dict__, "seed": 1}))
    assert a.curve() != c.curve()


def test_tv_is_inert_without_grid():
    ds = _toy_dataset()
    cfg = ModelConfig(mlp_width=16, pe_frequencies=2)
    ma, _ = T.train(ds, cfg, QUICK)
    mb, _ = T.train(ds, cfg, TrainConfig(**{**QUICK.__dict__, "tv_weight": 5.0}))
    np.testing.assert_array_equal(ma.params, mb.params)


def test_divergence_rolls_back(monkeypatch):
    ds = _toy_dataset()
    real = T.render_rays
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 15:  # a training call after the first evaluation
            raise FieldNumericError("synthetic failure")
        return real(*args, **kw)

    cfg = TrainConfig(iterations=40, batch_rays=32, samples_per_ray=4, eval_every=5)
    clean, _ = T.train(ds, SMALL, cfg)
    monkeypatch.setattr(T, "render_rays", flaky)
    model, rep = T.train(ds, SMALL, cfg)
    assert rep.diverged and rep.diverged_at is not None
    assert np.all(np.isfinite(model.params))
    assert math.isfinite(rep.final_psnr)
    assert rep.records[-1].iteration == rep.diverged_at
    assert rep.diverged_at < cfg.iterations
    assert not np.array_equal(model.params, clean.params)


def test_run_artifacts(tmp_path):
    ds = _toy_dataset()
    model, rep = T.train(ds, SMALL, QUICK, out_dir=tmp_path)
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    assert tuple(rows[0]) == T.REPORT_COLUMNS
    assert [r[0] for r in rows[1:]] == ["10", "20", "30", "summary"]
    assert float(rows[-1][1]) == rep.final_psnr
    js = json.loads((tmp_path / "report.json").read_text())
    assert js["final_psnr"] == rep.final_psnr and js["config"]["tv_weight"] == 0.01
    np.testing.assert_array_equal(load_checkpoint(tmp_path / "model.ckpt").params, model.params)


def test_empty_training_set_rejected():
    ds = _toy_dataset()
    ds.train = []
    with pytest.raises(ValueError):
        T.train(ds, SMALL, QUICK)
