"""Experiment sweeps over representation space, iterations, model size and log scale.

Every sweep is a set of independent training cells keyed by
(dataset, space, axis value, seed). Cells may run in worker processes;
results are gathered by key, so scheduling order never reaches the CSVs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bidr, data, svg
from . import colorspace as cs
from .field import GridConfig, ModelConfig, param_count
from .train import TrainConfig, psnr, train  # noqa: F401  (psnr re-exported)

log = logging.getLogger(__name__)

QUALITY_SPACES = (cs.GPLOG, cs.LINEAR, cs.SRGB, cs.TRUELOG)
FULL_ITERATIONS = (500, 1000, 2000, 5000, 10000, 20000, 25000)
DESK_ITERATIONS = (100, 250, 500, 1000, 2500, 5000)
WIDTHS = (16, 32, 64, 128, 256)
GRID_BUDGETS = (256, 512, 1024, 2048, 4096, 8192)

DESK_MODEL = ModelConfig(mlp_width=64, mlp_depth=2, pe_frequencies=4, grid=GridConfig(4096, 4))
# 256 rays keeps a 1500-iteration run near 40 s on one core
DESK_TRAIN = TrainConfig(iterations=1500, batch_rays=256, eval_every=250, samples_per_ray=32)


def mean_luminance(dataset, fraction: float = 0.25, rng=None) -> float:
    """Mean linear luminance over a random ``fraction`` of the frames (at least one)."""
    n = len(dataset.images)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(0) if rng is None else rng
    k = min(n, max(1, int(round(fraction * n))))
    pick = np.sort(rng.choice(n, size=k, replace=False))
    lin = dataset.linear()[pick]
    return float(np.mean(cs.luminance(lin)))


# -- cells --------------------------------------------------------------------------------


@dataclass
class Settings:
    model: ModelConfig = DESK_MODEL
    train: TrainConfig = DESK_TRAIN
    seed: int = 0
    workers: int = 1
    save_runs: bool = True

    def snapshot(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train), "seed": self.seed}


@dataclass
class CellResult:
    key: tuple
    psnr: float = math.nan
    diverged: bool = False
    params: int = 0
    curve: list = field(default_factory=list)
    error: str | None = None


@dataclass(frozen=True)
class _Job:
    key: tuple
    dataset: object
    model: ModelConfig
    train: TrainConfig
    out_dir: str | None


def _run_job(job: _Job) -> CellResult:
    try:
        model, report = train(job.dataset, job.model, job.train, job.out_dir)
        return CellResult(job.key, report.final_psnr, report.diverged, model.params.size, report.curve())
    except Exception as exc:  # a failing cell is data; the sweep goes on
        log.exception("cell %s failed", job.key)
        return CellResult(job.key, error=f"{type(exc).__name__}: {exc}")


def run_jobs(jobs: list[_Job], workers: int = 1) -> dict[tuple, CellResult]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return {r.key: r for r in results}


def _job(key, dataset, settings: Settings, out: Path | None, space, seed, model=None, tcfg=None):
    model = replace(model or settings.model, representation_space=space, seed=seed)
    tcfg = replace(tcfg or settings.train, seed=seed)
    run_dir = None
    if out is not None and settings.save_runs:
        run_dir = str(out / "runs" / "_".join(_slug(k) for k in key))
    return _Job(key, dataset, model, tcfg, run_dir)


def _slug(v) -> str:
    return str(v).replace(":", "").replace("/", "-").replace(" ", "")


def run_seeds(settings: Settings, repeats: int) -> list[int]:
    return [settings.seed + i for i in range(repeats)]


def _prepare(out) -> Path | None:
    if out is None:
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def _write_meta(out: Path | None, command: str, settings: Settings, **extra) -> None:
    if out is None:
        return
    meta = {"command": command, "settings": settings.snapshot(), "holdout": "every 8th frame", **extra}
    (out / "metadata.json").write_text(json.dumps(meta, indent=1, default=str))


def _errors(results) -> list[str]:
    return [f"{r.key}: {r.error}" for r in results.values() if r.error]


@dataclass
class SweepResult:
    header: list[str]
    rows: list[list]
    errors: list[str]
    cells: dict = field(default_factory=dict)


def _best(results, keys) -> float:
    vals = [results[k].psnr for k in keys if not results[k].error and not results[k].diverged]
    vals = [v for v in vals if not math.isnan(v)]
    return max(vals) if vals else math.nan


# -- sweeps ---------------------------------------------------------------------------------


def quality_table(datasets: dict, spaces=QUALITY_SPACES, repeats: int = 5, settings: Settings | None = None, out=None):
    """Best held-out PSNR over ``repeats`` runs per (dataset, space).

    Rows are sorted by TrueLog minus sRGB PSNR, largest first, when both
    spaces are present. Diverged runs never count as best.
    """
    settings = settings or Settings()
    out = _prepare(out)
    seeds = run_seeds(settings, repeats)
    jobs = [
        _job((name, str(sp), s), ds, settings, out, sp, s)
        for name, ds in datasets.items()
        for sp in spaces
        for s in seeds
    ]
    results = run_jobs(jobs, settings.workers)
    has_delta = cs.TRUELOG in spaces and cs.SRGB in spaces
    header = ["dataset"] + [f"psnr_{sp}" for sp in spaces] + (["delta_psnr"] if has_delta else [])
    rows = []
    for name in datasets:
        best = {sp: _best(results, [(name, str(sp), s) for s in seeds]) for sp in spaces}
        row = [name] + [best[sp] for sp in spaces]
        if has_delta:
            row.append(best[cs.TRUELOG] - best[cs.SRGB])
        rows.append(row)
    if has_delta:
        rows.sort(key=lambda r: -r[-1] if math.isfinite(r[-1]) else math.inf)
    res = SweepResult(header, rows, _errors(results), results)
    if out is not None:
        _write_csv(out / "quality.csv", header, rows)
        _write_meta(out, "quality", settings, repeats=repeats, seeds=seeds, spaces=[str(s) for s in spaces])
    return res


def robustness_suite(dataset, spaces=QUALITY_SPACES, runs: int = 10, settings: Settings | None = None, seeds=None, out=None, name="dataset"):
    """Sample statistics of final PSNR over ``runs`` trainings per space.

    Diverged runs contribute the PSNR they had when they were stopped.
    Columns: space, stddev (sample, ddof=1), avg, min, max.
    """
    settings = settings or Settings()
    out = _prepare(out)
    seeds = list(seeds) if seeds is not None else run_seeds(settings, runs)
    if len(seeds) != runs:
        raise ValueError("need one seed per run")
    jobs = [_job((name, str(sp), i), dataset, settings, out, sp, s) for sp in spaces for i, s in enumerate(seeds)]
    results = run_jobs(jobs, settings.workers)
    header = ["space", "stddev", "avg", "min", "max", "diverged"]
    rows = []
    for sp in spaces:
        cells = [results[(name, str(sp), i)] for i in range(runs)]
        vals = np.array([c.psnr for c in cells if not c.error], dtype=np.float64)
        rows.append([str(sp), *summary_stats(vals), sum(c.diverged for c in cells)])
    res = SweepResult(header, rows, _errors(results), results)
    if out is not None:
        _write_csv(out / "robustness.csv", header, rows)
        _write_meta(out, "robustness", settings, runs=runs, seeds=seeds, spaces=[str(s) for s in spaces])
    return res


def summary_stats(vals) -> tuple[float, float, float, float]:
    """(stddev with ddof=1, mean, min, max); stddev is 0 for a single value."""
    vals = [float(v) for v in vals]
    if not vals:
        return (math.nan,) * 4
    # exact rational arithmetic: identical runs give exactly 0 spread
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return std, statistics.mean(vals), min(vals), max(vals)


def iteration_sweep(dataset, spaces=QUALITY_SPACES, iters=DESK_ITERATIONS, settings: Settings | None = None, out=None, name="dataset"):
    """Held-out PSNR after training with each iteration budget (independent runs)."""
    settings = settings or Settings()
    out = _prepare(out)
    jobs = [
        _job((name, str(sp), n), dataset, settings, out, sp, settings.seed,
             tcfg=replace(settings.train, iterations=n, eval_every=n))
        for sp in spaces
        for n in iters
    ]
    results = run_jobs(jobs, settings.workers)
    header = ["space", "iterations", "psnr", "diverged"]
    rows = [[str(sp), n, results[(name, str(sp), n)].psnr, results[(name, str(sp), n)].diverged] for sp in spaces for n in iters]
    res = SweepResult(header, rows, _errors(results), results)
    if out is not None:
        _write_csv(out / "iterations.csv", header, rows)
        series = {str(sp): (list(iters), [results[(name, str(sp), n)].psnr for n in iters]) for sp in spaces}
        svg.plot(out / "iterations.svg", series, "training iterations", "PSNR (dB)", "PSNR vs iterations", logx=True)
        scaled = tuple(iters) != FULL_ITERATIONS
        _write_meta(out, "iters", settings, iterations=list(iters), full_scale_iterations=list(FULL_ITERATIONS), desk_scaled=scaled)
    return res


def compactness_sweep(dataset, axis: str = "width", values=None, spaces=QUALITY_SPACES, settings: Settings | None = None, out=None, name="dataset"):
    """PSNR and parameter count as MLP width or grid entry budget varies."""
    settings = settings or Settings()
    if axis not in ("width", "grid_budget"):
        raise ValueError("axis must be 'width' or 'grid_budget'")
    values = list(values or (WIDTHS if axis == "width" else GRID_BUDGETS))
    out = _prepare(out)

    def model_for(v):
        if axis == "width":
            return replace(settings.model, mlp_width=int(v))
        feat = settings.model.grid.feature_dim if settings.model.grid else 4
        return replace(settings.model, grid=GridConfig(int(v), feat))

    jobs = [_job((name, str(sp), v), dataset, settings, out, sp, settings.seed, model=model_for(v)) for sp in spaces for v in values]
    results = run_jobs(jobs, settings.workers)
    header = ["space", axis, "param_count", "psnr", "diverged"]
    rows = [
        [str(sp), v, param_count(model_for(v)), results[(name, str(sp), v)].psnr, results[(name, str(sp), v)].diverged]
        for sp in spaces
        for v in values
    ]
    res = SweepResult(header, rows, _errors(results), results)
    if out is not None:
        _write_csv(out / f"compactness_{axis}.csv", header, rows)
        series = {str(sp): (values, [results[(name, str(sp), v)].psnr for v in values]) for sp in spaces}
        label = "MLP width" if axis == "width" else "grid entry budget"
        svg.plot(out / f"compactness_{axis}.svg", series, label, "PSNR (dB)", f"PSNR vs {label}", logx=True)
        _write_meta(out, "compactness", settings, axis=axis, values=values)
    return res


ABLATION_SPACES = (cs.TRUELOG, cs.LOG100, cs.LOG01)


def scaledlog_ablation(datasets: dict, repeats: int = 1, settings: Settings | None = None, out=None):
    """TrueLog against ScaledLog with k = 25500 (Log100) and k = 25.5 (Log01)."""
    settings = settings or Settings()
    out = _prepare(out)
    res = quality_table(datasets, ABLATION_SPACES, repeats, settings, out)
    header = ["dataset", "truelog", "log100", "log01"]
    rows = [r[:4] for r in res.rows]
    ablation = SweepResult(header, rows, res.errors, res.cells)
    if out is not None:
        _write_csv(out / "ablation.csv", header, rows)
        _write_meta(out, "ablation", settings, k_values={"log100": cs.LOG100.k, "log01": cs.LOG01.k}, repeats=repeats)
    return ablation


def brightness_analysis(datasets: dict, repeats: int = 1, settings: Settings | None = None, out=None, fraction=0.25):
    """Mean luminance of each dataset against its TrueLog minus sRGB PSNR."""
    settings = settings or Settings()
    out = _prepare(out)
    q = quality_table(datasets, (cs.SRGB, cs.TRUELOG), repeats, settings, out)
    by_name = {r[0]: r for r in q.rows}
    header = ["dataset", "mean_luminance", "delta_psnr", "psnr_srgb", "psnr_truelog"]
    rows = []
    for name, ds in datasets.items():
        lum = mean_luminance(ds, fraction, np.random.default_rng(settings.seed))
        r = by_name[name]
        rows.append([name, lum, r[3], r[1], r[2]])
    res = SweepResult(header, rows, q.errors, q.cells)
    if out is not None:
        _write_csv(out / "brightness.csv", header, rows)
        svg.plot(
            out / "brightness.svg",
            {"TrueLog - sRGB": ([r[1] for r in rows], [r[2] for r in rows])},
            "mean luminance",
            "delta PSNR (dB)",
            "PSNR gain vs scene brightness",
            lines=False,
        )
        _write_meta(out, "brightness", settings, fraction=fraction, repeats=repeats)
    return res


def direction_of_effect(scenes: dict, spaces=QUALITY_SPACES, seeds=(0, 1, 2), settings: Settings | None = None, out=None):
    """Median held-out PSNR per (scene, space) over ``seeds``.

    ``scenes`` maps a name to a dataset, typically a dark and a bright
    variant of one scene. Every run is written to ``runs.csv`` and, when
    ``settings.save_runs`` is set, keeps its checkpoint and curve under
    ``runs/`` so a surprising ordering can be audited afterwards.
    """
    settings = settings or Settings()
    out = _prepare(out)
    seeds = list(seeds)
    jobs = [_job((name, str(sp), s), ds, settings, out, sp, s) for name, ds in scenes.items() for sp in spaces for s in seeds]
    results = run_jobs(jobs, settings.workers)
    run_rows = [[k[0], k[1], k[2], r.psnr, r.diverged, r.error or ""] for k, r in results.items()]
    header = ["scene", "mean_luminance"] + [f"median_{sp}" for sp in spaces]
    has_delta = cs.TRUELOG in spaces and cs.SRGB in spaces
    if has_delta:
        header.append("delta_psnr")
    rows = []
    for name, ds in scenes.items():
        med = {}
        for sp in spaces:
            vals = [results[(name, str(sp), s)].psnr for s in seeds if not results[(name, str(sp), s)].error]
            med[sp] = float(np.median(vals)) if vals else math.nan
        row = [name, mean_luminance(ds, 1.0)] + [med[sp] for sp in spaces]
        if has_delta:
            row.append(med[cs.TRUELOG] - med[cs.SRGB])
        rows.append(row)
    res = SweepResult(header, rows, _errors(results), results)
    if out is not None:
        _write_csv(out / "runs.csv", ["scene", "space", "seed", "psnr", "diverged", "error"], run_rows)
        _write_csv(out / "direction.csv", header, rows)
        _write_meta(out, "direction", settings, seeds=seeds, spaces=[str(s) for s in spaces], scenes=list(scenes))
    return res


DARK_SCALE = 0.05


def dark_bright_pair(scene_seed: int = 0, views: int = 24, size: int = 64, recipe: bidr.SceneRecipe | None = None) -> dict:
    """One recipe rendered under full and 0.05x illumination, stored as GPLog.

    Both variants use a black background so that, in the dark one,
    silhouettes against a white backdrop do not dominate PSNR.
    """
    recipe = recipe or bidr.SceneRecipe()
    cams = data.orbit_cameras(views, size=size)
    out = {}
    for name, scale in (("dark", DARK_SCALE), ("bright", 1.0)):
        scene = bidr.generate_scene(replace(recipe, illumination_scale=recipe.illumination_scale * scale), scene_seed)
        out[name] = data.synthetic_dataset(scene, cams, cs.GPLOG, white_background=False)
    return out


def direction_verdict(res: SweepResult, margin: float = 0.1) -> dict:
    """TrueLog within ``margin`` dB of the best other space on the dark scene, and a larger gain there."""
    rows = {r[0]: dict(zip(res.header, r)) for r in res.rows}
    dark, bright = rows["dark"], rows["bright"]
    others = max(dark[f"median_{sp}"] for sp in (cs.SRGB, cs.LINEAR, cs.GPLOG))
    return {
        "truelog_leads_on_dark": bool(dark[f"median_{cs.TRUELOG}"] >= others - margin),
        "gain_larger_on_dark": bool(dark["delta_psnr"] >= bright["delta_psnr"]),
    }
