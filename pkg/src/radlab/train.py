"""Optimisation loop: Charbonnier loss on sRGB, optional grid TV, Adam with geometric LR decay."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .field import FieldNumericError, ModelConfig, RadianceModel, init_model, save_checkpoint
from .render import RenderConfig, pixel_directions, render_image, render_rays, render_rays_backward

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("iteration", "psnr", "loss", "lr", "wall_ms")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 1024
    lr_start: float = 0.01
    lr_end: float = 0.001
    charbonnier_eps: float = 1e-3
    tv_weight: float | None = None  # None: 0.01 with a grid, 0 without
    seed: int = 0
    eval_every: int = 500
    samples_per_ray: int = 32
    stratified: bool = True
    deterministic: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.batch_rays < 1 or self.eval_every < 1:
            raise ValueError("batch_rays and eval_every must be >= 1")
        if self.charbonnier_eps <= 0:
            raise ValueError("charbonnier_eps must be > 0")

    def resolved_tv(self, model_cfg: ModelConfig) -> float:
        if self.tv_weight is not None:
            return self.tv_weight
        return 0.01 if model_cfg.grid is not None else 0.0


def psnr(a, b) -> float:
    """10 log10(1 / MSE) over all pixels and channels; identical images give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def charbonnier(pred, gt, eps: float = 1e-3) -> float:
    """Mean of sqrt(d^2 + eps^2) over every channel (and ray) given."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.mean(np.sqrt(d * d + eps * eps)))


def charbonnier_grad(pred, gt, eps: float = 1e-3) -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return d / np.sqrt(d * d + eps * eps) / d.size


def tv_regularizer(grid) -> float:
    """Mean squared difference over all axis-adjacent pairs of a (r, r, r, F) grid."""
    if grid is None:
        return 0.0
    g = np.asarray(grid, dtype=np.float64)
    total, pairs = 0.0, 0
    for axis in range(3):
        diff = np.diff(g, axis=axis)
        total += float(np.sum(diff * diff))
        pairs += diff.size
    return total / pairs if pairs else 0.0


def tv_grad(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    out = np.zeros_like(g)
    pairs = sum(np.diff(g, axis=a).size for a in range(3))
    for axis in range(3):
        diff = np.diff(g, axis=axis) * (2.0 / pairs)
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis], lo[axis] = slice(1, None), slice(None, -1)
        out[tuple(hi)] += diff
        out[tuple(lo)] -= diff
    return out


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Geometric interpolation from lr_start (step 0) to lr_end (step == iterations)."""
    if not 0 <= step <= cfg.iterations:
        raise ValueError(f"step {step} outside [0, {cfg.iterations}]")
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (step / cfg.iterations)


class Adam:
    def __init__(self, n: int, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        params -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params.dtype)


# -- batches --------------------------------------------------------------------------


def sample_batch(dataset, n: int, rng):
    """Uniform-with-replacement draw of (view, row, col, gt sRGB) over training pixels."""
    if n < 1:
        raise ValueError("n must be >= 1")
    train = np.asarray(dataset.train)
    if train.size == 0:
        raise ValueError("dataset has no training views")
    H, W = dataset.height, dataset.width
    flat = rng.integers(0, train.size * H * W, size=n)
    views = train[flat // (H * W)]
    rows = (flat % (H * W)) // W
    cols = flat % W
    gt = dataset.srgb()[views, rows, cols]
    return views, rows, cols, gt


def _batch_rays(dataset, views, rows, cols):
    o = np.empty((views.size, 3))
    d = np.empty((views.size, 3))
    near = np.empty(views.size)
    far = np.empty(views.size)
    for v in np.unique(views):
        sel = views == v
        cam = dataset.cameras[v]
        o[sel], d[sel] = pixel_directions(cam, rows[sel], cols[sel])
        near[sel], far[sel] = cam.near, cam.far
    return o, d, near, far


# -- reports --------------------------------------------------------------------------


@dataclass
class EvalRecord:
    iteration: int
    psnr: float
    loss: float
    lr: float
    wall_ms: float


@dataclass
class RunReport:
    config: dict
    seed: int
    records: list[EvalRecord] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None
    diverged: bool = False
    diverged_at: int | None = None

    @property
    def final_psnr(self) -> float:
        return self.records[-1].psnr if self.records else math.nan

    def curve(self) -> list[tuple]:
        """Timing-free content; equal across runs with the same config and seed."""
        return [(r.iteration, r.psnr, r.loss, r.lr) for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([r.iteration, repr(r.psnr), repr(r.loss), repr(r.lr), f"{r.wall_ms:.1f}"])
            last = self.records[-1] if self.records else EvalRecord(0, math.nan, math.nan, math.nan, 0.0)
            w.writerow(["summary", repr(last.psnr), repr(last.loss), repr(last.lr), f"{self.wall_time * 1000:.1f}"])

    def write_json(self, path) -> None:
        d = asdict(self)
        d["final_psnr"] = self.final_psnr
        Path(path).write_text(json.dumps(d, indent=1, default=str))


def evaluate(model: RadianceModel, dataset, rcfg: RenderConfig, views=None) -> float:
    """Mean PSNR over ``views`` (held-out by default), rendered without jitter."""
    views = dataset.held_out if views is None else views
    gt = dataset.srgb()
    vals = [psnr(render_image(model, dataset.cameras[v], rcfg), gt[v]) for v in views]
    return float(np.mean(vals))


def train(dataset, model_cfg: ModelConfig, tcfg: TrainConfig, out_dir=None, model: RadianceModel | None = None):
    """Fit a model to ``dataset``'s sRGB frames.

    Returns (model, report). On a non-finite loss the run stops, the model is
    rolled back to the last evaluated parameters and the report is flagged
    as diverged.
    """
    if not dataset.train:
        raise ValueError("dataset has no training views")
    model = init_model(model_cfg) if model is None else model
    tv_weight = tcfg.resolved_tv(model_cfg)
    white = dataset.background
    rcfg_train = RenderConfig(tcfg.samples_per_ray, tcfg.stratified, model_cfg.representation_space, white)
    rcfg_eval = RenderConfig(tcfg.samples_per_ray, False, model_cfg.representation_space, white)
    snapshot = {"model": model_cfg.to_dict(), "train": asdict(tcfg), "tv_weight": tv_weight, "white_background": white}
    report = RunReport(config=snapshot, seed=tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(model.params.size, tcfg.adam_betas, tcfg.adam_eps)
    last_good = model.params.copy()
    t0 = time.perf_counter()
    loss = math.nan

    for it in range(1, tcfg.iterations + 1):
        lr = lr_schedule(it - 1, tcfg)
        views, rows, cols, gt = sample_batch(dataset, tcfg.batch_rays, rng)
        o, d, near, far = _batch_rays(dataset, views, rows, cols)
        jitter = rng.random((tcfg.batch_rays, tcfg.samples_per_ray)) if tcfg.stratified else None
        grad = None
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                pred, cache = render_rays(model, o, d, near, far, rcfg_train, jitter)
                loss = charbonnier(pred, gt, tcfg.charbonnier_eps)
                grad = render_rays_backward(model, cache, charbonnier_grad(pred, gt, tcfg.charbonnier_eps))
                if tv_weight > 0 and model.grid is not None:
                    loss += tv_weight * tv_regularizer(model.grid)
                    off, _ = model.layout["grid"]
                    grad[off : off + model.grid.size] += tv_weight * tv_grad(model.grid).reshape(-1)
        except FieldNumericError as exc:
            log.warning("run seed=%d diverged at iteration %d: %s", tcfg.seed, it, exc)
        ok = grad is not None and math.isfinite(loss) and np.all(np.isfinite(grad))
        if ok:
            opt.step(model.params, grad, lr)
            ok = np.all(np.isfinite(model.params))
        if not ok:
            report.diverged, report.diverged_at = True, it
            model.params[:] = last_good
            p = evaluate(model, dataset, rcfg_eval)
            report.records.append(EvalRecord(it, p, math.nan, lr, (time.perf_counter() - t0) * 1000))
            break
        if it % tcfg.eval_every == 0 or it == tcfg.iterations:
            p = evaluate(model, dataset, rcfg_eval)
            report.records.append(EvalRecord(it, p, loss, lr, (time.perf_counter() - t0) * 1000))
            last_good = model.params.copy()
            log.info("it %d loss %.5f psnr %.2f", it, loss, p)

    report.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "model.ckpt"
        save_checkpoint(model, ckpt)
        report.checkpoint = str(ckpt)
        report.write_csv(out_dir / "report.csv")
        report.write_json(out_dir / "report.json")
    return model, report
