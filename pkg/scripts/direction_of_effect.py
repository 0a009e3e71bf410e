"""Dark versus bright variant of one BIDR scene, four representation spaces, three seeds.

    python scripts/direction_of_effect.py --out results/direction

Writes runs.csv (one line per training run), direction.csv (medians and
TrueLog minus sRGB), metadata.json and runs/<scene>_<space>_<seed>/ with
checkpoints and learning curves.
"""

import argparse
import logging
import time
from pathlib import Path

from radlab import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/direction"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--scene-seed", type=int, default=0)
    ap.add_argument("--views", type=int, default=24)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    t = time.time()
    scenes = harness.dark_bright_pair(args.scene_seed, args.views, args.size)
    settings = harness.Settings(workers=args.workers)
    res = harness.direction_of_effect(scenes, harness.QUALITY_SPACES, args.seeds, settings, args.out)
    for row in res.rows:
        print("  ".join(f"{h}={v:.4g}" if isinstance(v, float) else f"{h}={v}" for h, v in zip(res.header, row)))
    for name, ok in harness.direction_verdict(res).items():
        print(f"{name}: {'yes' if ok else 'no'}")
    print(f"wall time {time.time() - t:.0f} s")


if __name__ == "__main__":
    main()
