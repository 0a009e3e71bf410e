"""Iteration, compactness, ScaledLog and brightness sweeps on generated scenes at desk scale.

    python scripts/desk_sweeps.py --out results/desk --scales 1.0 0.3 0.1 0.05

Each sweep writes its CSV, SVG (where there is one) and metadata.json into
its own subdirectory. Runtime grows with the number of cells; at the desk
defaults one cell takes about 40 s on one core.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from radlab import bidr, data, harness
from radlab import colorspace as cs


def scenes(scales, scene_seed=0, views=24, size=64):
    cams = data.orbit_cameras(views, size=size)
    out = {}
    for s in scales:
        scene = bidr.generate_scene(bidr.SceneRecipe(illumination_scale=s), scene_seed)
        out[f"scale{s:g}"] = data.synthetic_dataset(scene, cams, cs.GPLOG, white_background=False)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/desk"))
    ap.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.3, 0.1, 0.05])
    ap.add_argument("--sweeps", nargs="+", default=["iters", "width", "grid", "ablation", "brightness"])
    ap.add_argument("--iterations", type=int, default=1500)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    settings = harness.Settings(train=replace(harness.DESK_TRAIN, iterations=args.iterations), workers=args.workers)
    sets = scenes(args.scales)
    darkest = min(args.scales)
    dark = sets[f"scale{darkest:g}"]
    pair = (cs.SRGB, cs.TRUELOG)
    if "iters" in args.sweeps:
        harness.iteration_sweep(dark, pair, harness.DESK_ITERATIONS, settings, args.out / "iters", f"scale{darkest:g}")
    if "width" in args.sweeps:
        harness.compactness_sweep(dark, "width", (16, 32, 64, 128), pair, settings, args.out / "width", f"scale{darkest:g}")
    if "grid" in args.sweeps:
        harness.compactness_sweep(dark, "grid_budget", harness.GRID_BUDGETS, pair, settings, args.out / "grid", f"scale{darkest:g}")
    if "ablation" in args.sweeps:
        harness.scaledlog_ablation(sets, 1, settings, args.out / "ablation")
    if "brightness" in args.sweeps:
        harness.brightness_analysis(sets, 1, settings, args.out / "brightness")


if __name__ == "__main__":
    main()
