"""Acceptance gate. Each test records one PASS/FAIL line, printed at the end of the run.

The direction-of-effect experiment (criterion 8) trains 24 models and takes
roughly 20 minutes on one core; its artifacts are kept under
``results/acceptance/direction`` for auditing.
"""

import csv
import json
import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import mpmath
import numpy as np
import pytest

from radlab import bidr, data, harness
from radlab import colorspace as cs
from radlab.field import GridConfig, ModelConfig, RadianceModel, init_model
from radlab.render import Camera, OracleField, RenderConfig, composite, render_image, render_rays, render_rays_backward
from radlab.train import TrainConfig, charbonnier, charbonnier_grad, train

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = ROOT / "results" / "acceptance"
FIVE = list(cs.ALL_SPACES)


def _lab(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "radlab.cli", *map(str, args)], capture_output=True, text=True, cwd=cwd)


def test_1_round_trips(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for sp in FIVE + [cs.LOG01]:
        x = rng.uniform(sp.x_lo, 1.0, 100_000)
        x[:2] = sp.x_lo, 1.0
        worst[str(sp)] = float(np.max(np.abs(cs.inverse_transform(sp, cs.forward_transform(sp, x)) - x)))
    dt = time.perf_counter() - t
    ok = max(worst.values()) < 1e-9 and dt < 5.0
    criterion(1, ok, f"max round-trip error {max(worst.values()):.2e} over 1e5 samples/space, {dt:.2f} s")
    assert ok, worst


def _literal_truelog(x):
    e = mpmath.e

    def f(v):
        return mpmath.log(mpmath.exp(mpmath.log(max(255 * v, mpmath.mpf(1))) - 1) * 255 / (e - 1))

    lo, hi = f(mpmath.mpf(1) / 255), f(mpmath.mpf(1))
    return (f(x) - lo) / (hi - lo)


def test_2_truelog_closed_form(criterion):
    grid = np.linspace(0.0, 1.0, 10_000)
    with mpmath.workdps(50):
        ref = np.array([float(_literal_truelog(mpmath.mpf(float(x)))) for x in grid])
    closed = np.log(np.maximum(255 * grid, 1.0)) / np.log(255.0)
    ours = cs.forward_transform(cs.TRUELOG, grid)
    err = max(np.max(np.abs(ref - closed)), np.max(np.abs(ref - ours)))
    ok = err < 1e-12
    criterion(2, ok, f"max |literal - closed form| {err:.2e} on 1e4 points")
    assert ok


def test_3_gradient_integrity(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    fractions = {}
    for sp in FIVE:
        cfg = ModelConfig(mlp_width=8, mlp_depth=2, pe_frequencies=2, grid=GridConfig(64, 2), representation_space=sp, dtype="float64", seed=7)
        m = init_model(cfg)
        o = np.column_stack([rng.uniform(-0.3, 0.3, (4, 2)), np.full(4, 2.5)])
        d = np.column_stack([rng.normal(scale=0.15, size=(4, 2)), -np.ones(4)])
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        gt = rng.random((4, 3))
        rc = RenderConfig(3, False, sp, True)

        def loss(params):
            s, _ = render_rays(RadianceModel(cfg, params), o, d, 1.5, 3.5, rc)
            return charbonnier(s, gt)

        s, cache = render_rays(m, o, d, 1.5, 3.5, rc)
        g = render_rays_backward(m, cache, charbonnier_grad(s, gt))
        h = 1e-6
        fd = np.array([(loss(m.params + e) - loss(m.params - e)) / (2 * h) for e in np.eye(m.params.size) * h])
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        fractions[str(sp)] = float(np.mean(rel < 1e-3))
    dt = time.perf_counter() - t
    ok = min(fractions.values()) >= 0.99 and dt < 60
    criterion(3, ok, f"worst space {min(fractions, key=fractions.get)} {min(fractions.values()):.4f} of params within 1e-3, {dt:.1f} s")
    assert ok, fractions


def test_4_log_separation(criterion):
    worst = 0.0
    n = 0
    for seed in range(20):
        for shape in ("sphere", "box", "mixed"):
            for scale in (1.0, 0.05):
                s = bidr.generate_scene(bidr.SceneRecipe(primitives=4, shape=shape, illumination_scale=scale), seed)
                gammas = np.linspace(0, 1, 21)
                logs = [np.log(bidr.body_reflection(p.material, s.illumination, gammas)) for p in s.primitives]
                for a in logs:
                    for b in logs:
                        diff = a - b  # material-pair log difference is constant in gamma
                        worst = max(worst, float(np.max(np.abs(diff - diff[0]))))
                n += 1
    ok = worst < 1e-9
    criterion(4, ok, f"max deviation {worst:.2e} over {n} scenes")
    assert ok


def test_5_compositing_oracle(criterion):
    errs = []
    c, _, op = composite(np.full((4, 3), 0.6), np.zeros(4), np.full(4, 0.25))
    errs += [np.max(np.abs(c)), abs(op)]
    col = np.array([[0.2, 0.5, 0.9]])
    c, _, op = composite(col, np.array([20.0]), np.array([1.0]))
    errs += [np.max(np.abs(c - col[0])), abs(op - 1)]
    c1, c2 = np.array([0.9, 0.1, 0.3]), np.array([0.2, 0.7, 0.5])
    c, _, op = composite(np.stack([c1, c2]), np.array([math.log(2), 20.0]), np.array([1.0, 1.0]))
    errs += [np.max(np.abs(c - (0.5 * c1 + 0.5 * c2))), abs(op - 1)]
    worst = float(max(errs))
    ok = worst < 1e-8
    criterion(5, ok, f"max error {worst:.2e}")
    assert ok


def test_6_pipeline_consistency(criterion):
    scene = bidr.generate_scene(bidr.SceneRecipe(primitives=5, shape="mixed"), 4)
    cams = data.orbit_cameras(3, size=24)
    worst = 0.0
    for cam in cams:
        imgs = [render_image(OracleField(scene, sp), cam, RenderConfig(48, False, sp, True)) for sp in FIVE + [cs.LOG01]]
        worst = max(worst, max(float(np.max(np.abs(i - imgs[0]))) for i in imgs))
    ok = worst <= 1e-6
    criterion(6, ok, f"max channel difference {worst:.2e} across 6 spaces")
    assert ok


def _constant_view(linear=(0.45, 0.3, 0.15), size=16):
    box = bidr.Primitive("box", (0, 0, 0), (0.9, 0.9, 0.9), bidr.Material((1.0, 1.0, 1.0)))
    illum = bidr.Illumination((0.05, 0.05, 0.05), tuple(np.array(linear) - 0.05))
    scene = bidr.Scene((box,), illum, bidr.ShadowField("constant", value=1.0))
    cam = Camera(size, size, size, data.look_at([0, 0, 2.5]), 1.0, 4.0, name="0000.png")
    return data.synthetic_dataset(scene, [cam], cs.GPLOG)


def test_7_fit_sanity(criterion):
    ds = _constant_view()
    assert ds.train == ds.held_out == [0]
    model = ModelConfig(mlp_width=32, mlp_depth=2, pe_frequencies=2, grid=GridConfig(512, 2))
    tcfg = TrainConfig(iterations=500, batch_rays=128, samples_per_ray=16, eval_every=100)
    t = time.perf_counter()
    got = {}
    for sp in FIVE:
        _, rep = train(ds, replace(model, representation_space=sp), tcfg)
        got[str(sp)] = rep.final_psnr
    dt = time.perf_counter() - t
    ok = min(got.values()) > 30.0 and dt < 120
    criterion(7, ok, f"lowest PSNR {min(got.values()):.2f} dB ({min(got, key=got.get)}), {dt:.0f} s for 5 spaces")
    assert ok, got


@pytest.mark.slow
def test_8_direction_of_effect(criterion):
    out = ARTIFACTS / "direction"
    t = time.perf_counter()
    scenes = harness.dark_bright_pair(scene_seed=0, views=24, size=64)
    res = harness.direction_of_effect(scenes, harness.QUALITY_SPACES, (0, 1, 2), harness.Settings(), out)
    dt = time.perf_counter() - t
    assert not res.errors, res.errors
    verdict = harness.direction_verdict(res)
    rows = {r[0]: dict(zip(res.header, r)) for r in res.rows}
    runs = list(csv.reader(open(out / "runs.csv")))
    ckpts = sorted(out.glob("runs/*/model.ckpt"))
    auditable = len(runs) == 25 and len(ckpts) == 24
    ok = all(verdict.values()) and dt < 1800 and auditable
    dark = rows["dark"]
    criterion(
        8,
        ok,
        "dark medians "
        + " ".join(f"{sp}={dark[f'median_{sp}']:.2f}" for sp in harness.QUALITY_SPACES)
        + f"; delta dark {dark['delta_psnr']:+.2f} vs bright {rows['bright']['delta_psnr']:+.2f}; "
        + f"{verdict}; {dt / 60:.1f} min; artifacts in {out.relative_to(ROOT)}",
    )
    assert auditable and dt < 1800
    assert verdict["truelog_leads_on_dark"], rows
    assert verdict["gain_larger_on_dark"], rows


def test_9_robustness_reproducible(criterion, tmp_path):
    assert _lab("generate", "--out", tmp_path / "ds", "--views", "8", "--size", "12", "--seed", "1").returncode == 0
    fast = ["--iterations", "30", "--batch-rays", "32", "--samples-per-ray", "8", "--eval-every", "30", "--mlp-width", "16", "--grid-budget", "256"]
    outs = []
    for run in ("a", "b"):
        p = _lab("robustness", "--dataset", tmp_path / "ds", "--out", tmp_path / run, "--repeats", "10", "--seed", "5", *fast)
        assert p.returncode == 0, p.stderr
        outs.append((tmp_path / run / "robustness.csv").read_bytes())
    seeds = json.loads((tmp_path / "a" / "metadata.json").read_text())["seeds"]
    rows = list(csv.reader(outs[0].decode().splitlines()))
    ok = outs[0] == outs[1] and seeds == list(range(5, 15)) and len(rows) == 5
    criterion(9, ok, f"10-run statistics for {len(rows) - 1} spaces byte-identical across two processes: {outs[0] == outs[1]}")
    assert ok


POSE_FIELDS = 18
META_KEYS = {"colorspace", "white_level", "resolution", "near", "far", "holdout_every"}


def test_10_cli_end_to_end(criterion, tmp_path):
    t = time.perf_counter()
    steps = [
        ("generate", "--out", tmp_path / "gp", "--space", "gplog"),
        ("convert", "--in", tmp_path / "gp", "--out", tmp_path / "srgb", "--from", "gplog", "--to", "srgb"),
        ("train", "--dataset", tmp_path / "srgb", "--out", tmp_path / "run", "--space", "truelog"),
        ("eval", "--checkpoint", tmp_path / "run" / "model.ckpt", "--dataset", tmp_path / "srgb", "--out", tmp_path / "eval"),
        ("quality", "--dataset", tmp_path / "srgb", "--out", tmp_path / "quality", "--repeats", "1"),
    ]
    for step in steps:
        p = _lab(*step)
        assert p.returncode == 0, (step[0], p.stderr)
    dt = time.perf_counter() - t

    problems = []
    for ds in ("gp", "srgb"):
        meta = data.read_meta(tmp_path / ds / "meta.txt")
        if not META_KEYS <= meta.keys():
            problems.append(f"{ds}/meta.txt missing {META_KEYS - meta.keys()}")
        for line in (tmp_path / ds / "poses.txt").read_text().splitlines():
            if line and not line.startswith("#") and len(line.split()) != POSE_FIELDS:
                problems.append(f"{ds}/poses.txt line has {len(line.split())} fields")
        if len(list((tmp_path / ds / "frames").glob("*.png"))) != 24:
            problems.append(f"{ds} frame count")
    if data.read_meta(tmp_path / "srgb" / "meta.txt").get("converted_from") != "gplog":
        problems.append("converted_from not recorded")
    report = list(csv.reader(open(tmp_path / "run" / "report.csv")))
    if report[0] != ["iteration", "psnr", "loss", "lr", "wall_ms"] or report[-1][0] != "summary":
        problems.append("report.csv schema")
    ev = list(csv.reader(open(tmp_path / "eval" / "eval.csv")))
    if ev[0] != ["view", "psnr"] or ev[-1][0] != "mean" or len(ev) != 2 + 3:
        problems.append("eval.csv schema")
    for stem in ("0000", "0008", "0016"):
        for suffix in (".png", "_depth.png", "_depth.pfm"):
            if not (tmp_path / "eval" / "renders" / f"{stem}{suffix}").exists():
                problems.append(f"missing render {stem}{suffix}")
    q = list(csv.reader(open(tmp_path / "quality" / "quality.csv")))
    if q[0] != ["dataset", "psnr_gplog", "psnr_linear", "psnr_srgb", "psnr_truelog", "delta_psnr"] or len(q) != 2:
        problems.append("quality.csv schema")
    elif not all(math.isfinite(float(v)) for v in q[1][1:]):
        problems.append("non-finite PSNR in quality.csv")

    ok = dt < 600 and not problems
    criterion(10, ok, f"generate-convert-train-eval-quality in {dt / 60:.1f} min; schema problems: {problems or 'none'}")
    assert ok, problems
