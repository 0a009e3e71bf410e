"""PSNR of oracle quadrature renders against exact ray casts as samples per ray grow.

    python scripts/quadrature_study.py --out results/quadrature.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from radlab import bidr, data
from radlab import colorspace as cs
from radlab.render import OracleField, RenderConfig, image_rays, render_image
from radlab.train import psnr


def study(scene_seeds, samples, views=4, size=64):
    cams = data.orbit_cameras(views, size=size)
    rows = []
    for seed in scene_seeds:
        scene = bidr.generate_scene(bidr.SceneRecipe(), seed)
        refs = []
        for cam in cams:
            o, d = image_rays(cam)
            lin, _, _ = scene.render_analytic(o, d, cam.near, cam.far, True)
            refs.append(cs.forward_transform(cs.SRGB, lin).reshape(cam.height, cam.width, 3))
        for n in samples:
            rc = RenderConfig(n, False, cs.LINEAR, True)
            vals = [psnr(render_image(OracleField(scene, cs.LINEAR), cam, rc), ref) for cam, ref in zip(cams, refs)]
            rows.append((seed, n, float(np.mean(vals))))
            print(f"scene {seed}  n={n:5d}  {rows[-1][2]:.2f} dB", flush=True)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/quadrature.csv"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--samples", type=int, nargs="+", default=[32, 64, 128, 256, 512])
    args = ap.parse_args()
    rows = study(args.seeds, args.samples)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene_seed", "samples_per_ray", "psnr"])
        w.writerows((s, n, repr(p)) for s, n, p in rows)


if __name__ == "__main__":
    main()
