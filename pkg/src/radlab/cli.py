"""``lab`` command line: dataset generation/conversion, training, evaluation and sweeps."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import bidr, data, harness
from .colorspace import ColorSpace
from .field import GridConfig, load_checkpoint
from .imageio import depth_to_gray, write_pfm, write_png
from .render import RenderConfig, render_depth, render_image
from .train import TrainConfig, psnr, train

log = logging.getLogger("radlab")

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed", "adam_betas"}
_MODEL_KEYS = {"mlp_width", "mlp_depth", "pe_frequencies", "use_viewdirs", "grid_budget", "grid_features"}


def _coerce(old, value: str):
    if isinstance(old, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if old is None:
        return None if value.lower() in ("none", "") else float(value)
    return type(old)(value)


def load_settings(config_path=None, overrides=None, seed=0, workers=1) -> harness.Settings:
    """Desk defaults, then ``key=value`` lines from a config file, then CLI overrides."""
    values: dict[str, str] = {}
    if config_path:
        values.update(data.read_meta(config_path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    model, tcfg = harness.DESK_MODEL, harness.DESK_TRAIN
    tkw, mkw = {}, {}
    grid_budget = model.grid.budget if model.grid else 0
    grid_feat = model.grid.feature_dim if model.grid else 4
    for key, raw in values.items():
        raw = str(raw)
        if key in _TRAIN_KEYS:
            tkw[key] = _coerce(getattr(tcfg, key), raw)
        elif key == "grid_budget":
            grid_budget = int(raw)
        elif key == "grid_features":
            grid_feat = int(raw)
        elif key in _MODEL_KEYS:
            mkw[key] = _coerce(getattr(model, key), raw)
        else:
            raise SystemExit(f"unknown setting {key!r}")
    mkw["grid"] = GridConfig(grid_budget, grid_feat) if grid_budget > 0 else None
    return harness.Settings(replace(model, **mkw), replace(tcfg, **tkw), seed=seed, workers=workers)


def _spaces(items):
    return tuple(ColorSpace.parse(s) for s in items)


def _datasets(paths):
    return {Path(p).name: data.load_dataset(p) for p in paths}


# -- commands ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    recipe = bidr.SceneRecipe.load(args.recipe) if args.recipe else bidr.SceneRecipe()
    if args.illumination_scale is not None:
        recipe.illumination_scale = args.illumination_scale
    scene = bidr.generate_scene(recipe, args.seed)
    cams = data.orbit_cameras(args.views, size=args.size)
    space = ColorSpace.parse(args.space)
    out = Path(args.out)
    white = {8: 255, 10: 1023, 16: 65535}[args.bits]
    data.export_synthetic_dataset(
        scene, cams, space, out, white_level=white, white_background=not args.black_background,
        extra_meta={"recipe_seed": args.seed, "illumination_scale": recipe.illumination_scale},
    )
    bidr.save_scene(scene, out / "scene.json")
    (out / "recipe.txt").write_text(recipe.to_text())
    print(f"wrote {args.views} frames to {out} ({space})")
    return 0


def cmd_convert(args) -> int:
    src = ColorSpace.parse(args.source) if args.source else None
    res = data.convert_dataset(args.inp, src, ColorSpace.parse(args.target), args.out)
    print(f"converted {res.written} frames, {len(res.errors)} errors")
    return 1 if res.errors else 0


def cmd_train(args, settings) -> int:
    ds = data.load_dataset(args.dataset)
    model_cfg = replace(settings.model, representation_space=ColorSpace.parse(args.space), seed=args.seed)
    tcfg = replace(settings.train, seed=args.seed)
    _, report = train(ds, model_cfg, tcfg, args.out)
    print(f"final held-out PSNR {report.final_psnr:.3f} dB{' (diverged)' if report.diverged else ''}")
    return 1 if report.diverged else 0


def cmd_eval(args) -> int:
    ds = data.load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    rcfg = RenderConfig(args.samples, False, model.config.representation_space, ds.background)
    out = Path(args.out)
    (out / "renders").mkdir(parents=True, exist_ok=True)
    gt = ds.srgb()
    rows = []
    for v in ds.held_out:
        cam = ds.cameras[v]
        img = render_image(model, cam, rcfg)
        depth = render_depth(model, cam, rcfg)
        stem = Path(cam.name).stem
        write_png(out / "renders" / f"{stem}.png", img, 255)
        write_png(out / "renders" / f"{stem}_depth.png", depth_to_gray(depth, cam.near, cam.far), 255)
        write_pfm(out / "renders" / f"{stem}_depth.pfm", depth)
        rows.append((cam.name, psnr(img, gt[v])))
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "psnr"])
        w.writerows([(n, repr(p)) for n, p in rows])
        w.writerow(["mean", repr(sum(p for _, p in rows) / len(rows))])
    print(f"mean held-out PSNR {rows and sum(p for _, p in rows) / len(rows):.3f} dB")
    return 0


def cmd_sweep(args, settings) -> int:
    out = Path(args.out)
    spaces = _spaces(args.spaces) if args.spaces else None
    if args.command == "quality":
        res = harness.quality_table(_datasets(args.dataset), spaces or harness.QUALITY_SPACES, args.repeats, settings, out)
    elif args.command == "robustness":
        path = args.dataset[0]
        seeds = [args.seed] * args.repeats if args.same_seed else None
        res = harness.robustness_suite(
            data.load_dataset(path), spaces or harness.QUALITY_SPACES, args.repeats, settings, seeds, out, Path(path).name
        )
    elif args.command == "iters":
        iters = [int(v) for v in args.values] if args.values else harness.DESK_ITERATIONS
        path = args.dataset[0]
        res = harness.iteration_sweep(data.load_dataset(path), spaces or harness.QUALITY_SPACES, iters, settings, out, Path(path).name)
    elif args.command == "compactness":
        values = [int(v) for v in args.values] if args.values else None
        path = args.dataset[0]
        res = harness.compactness_sweep(
            data.load_dataset(path), args.axis, values, spaces or harness.QUALITY_SPACES, settings, out, Path(path).name
        )
    elif args.command == "ablation":
        res = harness.scaledlog_ablation(_datasets(args.dataset), args.repeats, settings, out)
    else:
        res = harness.brightness_analysis(_datasets(args.dataset), args.repeats, settings, out)
    print(",".join(res.header))
    for row in res.rows:
        print(",".join(str(harness._fmt(v)) for v in row))
    for err in res.errors:
        print(f"error: {err}", file=sys.stderr)
    return 1 if res.errors else 0


SWEEPS = ("quality", "robustness", "iters", "compactness", "ablation", "brightness")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic scene into a dataset directory")
    g.add_argument("--recipe", help="key=value scene recipe file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--views", type=int, default=24)
    g.add_argument("--space", default="gplog", help="color space the frames are stored in")
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--bits", type=int, choices=(8, 10, 16), default=16)
    g.add_argument("--illumination-scale", type=float)
    g.add_argument("--black-background", action="store_true")

    c = sub.add_parser("convert", help="re-encode a dataset's frames into another color space")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--from", dest="source")
    c.add_argument("--to", dest="target", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file of model/training settings")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--batch-rays", type=int)
        sp.add_argument("--samples-per-ray", type=int)
        sp.add_argument("--eval-every", type=int)
        sp.add_argument("--mlp-width", type=int)
        sp.add_argument("--grid-budget", type=int)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--deterministic", action="store_true", help="runs are always deterministic; recorded for provenance")

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--space", default="truelog", help="representation space")
    common(t)

    e = sub.add_parser("eval", help="render held-out views of a checkpoint and report PSNR")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--samples", type=int, default=32)

    for name in SWEEPS:
        s = sub.add_parser(name, help=f"{name} sweep")
        s.add_argument("--dataset", action="append", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--spaces", nargs="+")
        s.add_argument("--repeats", type=int, default={"quality": 5, "robustness": 10}.get(name, 1))
        s.add_argument("--values", nargs="+")
        s.add_argument("--axis", choices=("width", "grid_budget"), default="width")
        s.add_argument("--same-seed", action="store_true", help="robustness: reuse one seed for every run")
        common(s)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate":
        return cmd_generate(args)
    if args.command == "convert":
        return cmd_convert(args)
    if args.command == "eval":
        return cmd_eval(args)
    overrides = {
        "iterations": args.iterations,
        "batch_rays": args.batch_rays,
        "samples_per_ray": args.samples_per_ray,
        "eval_every": args.eval_every,
        "mlp_width": args.mlp_width,
        "grid_budget": args.grid_budget,
    }
    settings = load_settings(args.config, overrides, args.seed, args.workers)
    if args.command == "train":
        return cmd_train(args, settings)
    return cmd_sweep(args, settings)


if __name__ == "__main__":
    sys.exit(main())
