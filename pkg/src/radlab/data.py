"""Posed frame datasets on disk, input-space decoding and color-space conversion.

Directory layout::

    frames/0000.png ...   16-bit PNG (default) in the tagged source space
    poses.txt             one line per frame: name, 16 row-major world-from-camera
                          entries, focal in pixels
    meta.txt              key=value: colorspace, white_level, resolution, near, far, ...

``poses.txt`` is easy to produce from a COLMAP text export: invert each
camera-from-world (R, t) and flip the y and z camera axes to get the
OpenGL-style world-from-camera matrix used here.
"""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import colorspace as cs
from .colorspace import ColorSpace
from .imageio import quantize, read_png, write_png
from .render import Camera, image_rays

log = logging.getLogger(__name__)

HOLDOUT_EVERY = 8
WHITE_LEVELS = {8: 255, 10: 1023, 16: 65535}


class PoseParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


# -- pose files ---------------------------------------------------------------------


@dataclass(frozen=True)
class PoseEntry:
    name: str
    pose: np.ndarray
    focal: float


def load_poses(path, width: int | None = None, height: int | None = None, near=0.5, far=5.0):
    """Parse a pose file.

    Returns a list of :class:`Camera` (named after their frame) when the
    resolution is given, otherwise the raw :class:`PoseEntry` list.
    """
    entries = []
    seen = set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 18:
            raise PoseParseError(path, lineno, f"expected 18 fields, found {len(parts)}")
        name = parts[0]
        if name in seen:
            raise PoseParseError(path, lineno, f"duplicate frame {name!r}")
        try:
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise PoseParseError(path, lineno, str(exc)) from None
        pose = np.array(vals[:16]).reshape(4, 4)
        if not np.all(np.isfinite(pose)) or not np.allclose(pose[3], [0, 0, 0, 1]):
            raise PoseParseError(path, lineno, "last pose row must be 0 0 0 1")
        if not vals[16] > 0:
            raise PoseParseError(path, lineno, "focal must be positive")
        seen.add(name)
        entries.append(PoseEntry(name, pose, vals[16]))
    if width is None or height is None:
        return entries
    return [Camera(width, height, e.focal, e.pose, near, far, name=e.name) for e in entries]


def write_poses(path, cameras) -> None:
    lines = ["# name  m00 m01 ... m33 (world-from-camera, row-major)  focal"]
    for cam in cameras:
        m = " ".join(repr(float(v)) for v in cam.pose.reshape(-1))
        lines.append(f"{cam.name} {m} {cam.focal!r}")
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    tmp.replace(path)


def read_meta(path) -> dict[str, str]:
    meta = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def write_meta(path, meta: dict) -> None:
    _atomic_write(Path(path), "".join(f"{k}={v}\n" for k, v in meta.items()))


# -- datasets ------------------------------------------------------------------------


def holdout_split(n: int, every: int = HOLDOUT_EVERY):
    """Every ``every``-th frame is held out; a single-frame dataset trains and evaluates on itself."""
    if n == 1:
        return [0], [0]
    held = [i for i in range(n) if i % every == 0]
    return [i for i in range(n) if i % every != 0], held


@dataclass
class Dataset:
    images: np.ndarray  # (V, H, W, 3) source-space values in [0, 1]
    cameras: list[Camera]
    space: ColorSpace
    train: list[int]
    held_out: list[int]
    meta: dict = field(default_factory=dict)
    unregistered: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise ValueError("every frame needs a camera")
        if len({img.shape for img in self.images}) > 1:
            raise ValueError("frames must share one resolution")
        self._srgb = None

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def linear(self) -> np.ndarray:
        return decode_frame(self.images, self.space)

    def srgb(self) -> np.ndarray:
        """Training targets: source frames re-encoded as sRGB (input data transform)."""
        if self._srgb is None:
            self._srgb = cs.forward_transform(cs.SRGB, self.linear())
        return self._srgb

    @property
    def background(self) -> bool:
        return self.meta.get("background", "white") == "white"


def decode_frame(img, space: ColorSpace | str) -> np.ndarray:
    """Source-space frame (already normalised to [0, 1]) to linear RGB."""
    if isinstance(space, str):
        space = ColorSpace.parse(space)
    return cs.inverse_transform(space, np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0))


def encode_frame(linear, space: ColorSpace) -> np.ndarray:
    return cs.forward_transform(space, linear)


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta = read_meta(root / "meta.txt")
    space = ColorSpace.parse(meta["colorspace"])
    white = int(meta.get("white_level", 65535))
    w, h = (int(v) for v in meta["resolution"].split("x"))
    near, far = float(meta.get("near", 0.5)), float(meta.get("far", 5.0))
    cams = {c.name: c for c in load_poses(root / "poses.txt", w, h, near, far)}
    images, cameras, unregistered = [], [], []
    for frame in sorted((root / "frames").glob("*.png")):
        if frame.name not in cams:
            unregistered.append(frame.name)
            continue
        img = read_png(frame, white)
        if img.shape != (h, w, 3):
            raise ValueError(f"{frame} has shape {img.shape}, expected {(h, w, 3)}")
        images.append(img)
        cameras.append(cams[frame.name])
    if unregistered:
        log.warning("%d frames have no pose and are excluded: %s", len(unregistered), unregistered)
    if not images:
        raise ValueError(f"{root} has no registered frames")
    train, held = holdout_split(len(images), int(meta.get("holdout_every", HOLDOUT_EVERY)))
    return Dataset(np.stack(images), cameras, space, train, held, meta, unregistered)


def save_dataset(ds: Dataset, root, white_level: int = 65535) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    for img, cam in zip(ds.images, ds.cameras):
        write_png(root / "frames" / cam.name, img, white_level)
    write_poses(root / "poses.txt", ds.cameras)
    meta = dict(ds.meta)
    meta.update(
        colorspace=str(ds.space),
        white_level=white_level,
        resolution=f"{ds.width}x{ds.height}",
        near=repr(ds.cameras[0].near),
        far=repr(ds.cameras[0].far),
        holdout_every=meta.get("holdout_every", HOLDOUT_EVERY),
    )
    write_meta(root / "meta.txt", meta)


# -- synthetic capture ---------------------------------------------------------------


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(up, back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, true_up, back, eye
    return pose


def orbit_cameras(
    n: int,
    size: int = 64,
    radius: float = 3.2,
    elevation=(20.0, 45.0),
    fov_deg: float = 45.0,
    near: float = 1.2,
    far: float = 5.2,
) -> list[Camera]:
    """Cameras on a ring around the origin, elevation alternating within ``elevation``."""
    focal = 0.5 * size / math.tan(math.radians(fov_deg) / 2)
    cams = []
    for i in range(n):
        az = 2 * math.pi * i / n
        el = math.radians(elevation[0] + (elevation[1] - elevation[0]) * (i % 2))
        eye = radius * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        cams.append(Camera(size, size, focal, look_at(eye), near, far, name=f"{i:04d}.png"))
    return cams


def render_scene_views(scene, cameras, white_background=True) -> np.ndarray:
    """Analytic linear renders (V, H, W, 3) of ``scene``."""
    out = []
    for cam in cameras:
        o, d = image_rays(cam)
        lin, _, _ = scene.render_analytic(o, d, cam.near, cam.far, white_background)
        out.append(lin.reshape(cam.height, cam.width, 3))
    return np.stack(out)


def synthetic_dataset(scene, cameras, space: ColorSpace = cs.GPLOG, white_level=65535, white_background=True):
    """In-memory version of :func:`export_synthetic_dataset` (same quantisation)."""
    lin = render_scene_views(scene, cameras, white_background)
    enc = encode_frame(lin, space)
    if white_level:
        enc = quantize(enc, white_level).astype(np.float64) / white_level
    train, held = holdout_split(len(cameras))
    meta = {"source": "bidr-synthetic", "background": "white" if white_background else "black"}
    return Dataset(enc, list(cameras), space, train, held, meta)


def export_synthetic_dataset(
    scene, cameras, space: ColorSpace, out_dir, white_level=65535, white_background=True, extra_meta=None
) -> Dataset:
    """Render ``scene`` analytically, encode into ``space`` and write a dataset directory."""
    if len(cameras) < 2:
        raise ValueError("a synthetic export needs at least two cameras")
    ds = synthetic_dataset(scene, cameras, space, white_level, white_background)
    if extra_meta:
        ds.meta.update(extra_meta)
    save_dataset(ds, out_dir, white_level)
    return load_dataset(out_dir)


# -- conversion ---------------------------------------------------------------------------


@dataclass
class ConversionResult:
    written: int
    errors: list[tuple[str, str]] = field(default_factory=list)


def convert_dataset(in_dir, source: ColorSpace | None, target: ColorSpace, out_dir) -> ConversionResult:
    """Re-encode every frame from ``source`` to ``target`` through linear RGB.

    ``source`` must match the dataset's recorded tag when both are given; it
    is never guessed from pixel values. Unreadable frames are reported and
    skipped.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    frames = sorted((in_dir / "frames").glob("*.png")) if (in_dir / "frames").is_dir() else []
    meta_path = in_dir / "meta.txt"
    meta = read_meta(meta_path) if meta_path.exists() else {}
    if "colorspace" in meta:
        tagged = ColorSpace.parse(meta["colorspace"])
        if source is not None and source != tagged:
            raise ValueError(f"dataset is tagged {tagged}, not {source}")
        source = tagged
    if source is None:
        raise ValueError("source color space unknown: no meta.txt tag and none given")
    if not frames:
        return ConversionResult(0)
    white = int(meta.get("white_level", 65535))
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    result = ConversionResult(0)
    for frame in frames:
        try:
            img = read_png(frame, white)
            lin = decode_frame(img, source)
            write_png(out_dir / "frames" / frame.name, encode_frame(lin, target), white)
            result.written += 1
        except (OSError, ValueError) as exc:
            log.error("skipping %s: %s", frame, exc)
            result.errors.append((frame.name, str(exc)))
    if (in_dir / "poses.txt").exists() and in_dir.resolve() != out_dir.resolve():
        shutil.copyfile(in_dir / "poses.txt", out_dir / "poses.txt")
    meta["colorspace"] = str(target)
    meta["converted_from"] = str(source)
    write_meta(out_dir / "meta.txt", meta)
    if result.errors:
        _atomic_write(out_dir / "errors.txt", "".join(f"{n}\t{m}\n" for n, m in result.errors))
    return result
