"""PNG (8/16-bit) and portable float map readers/writers."""

from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np


def _atomic_target(path: Path) -> Path:
    return path.with_name(f".{path.stem}.tmp{path.suffix}")


def quantize(img, white_level: int) -> np.ndarray:
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    dtype = np.uint8 if white_level <= 255 else np.uint16
    return np.round(a * white_level).astype(dtype)


def write_png(path, img, white_level: int = 65535) -> None:
    """Write an RGB or gray image in [0, 1]. ``white_level`` 255 gives 8-bit, else 16-bit."""
    path = Path(path)
    q = quantize(img, white_level)
    if q.ndim == 3:
        q = q[..., ::-1]  # OpenCV stores BGR
    tmp = _atomic_target(path)
    if not cv2.imwrite(str(tmp), np.ascontiguousarray(q)):
        raise OSError(f"could not write {path}")
    os.replace(tmp, path)


def read_png(path, white_level: int | None = None) -> np.ndarray:
    """Read a PNG and normalise by ``white_level`` (defaults to the container maximum)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"could not read image {path}")
    if raw.ndim == 3:
        raw = raw[..., :3][..., ::-1]
    if white_level is None:
        white_level = 255 if raw.dtype == np.uint8 else 65535
    return raw.astype(np.float64) / white_level


def write_pfm(path, img) -> None:
    """Little-endian portable float map; rows stored bottom to top."""
    a = np.asarray(img, dtype="<f4")
    if a.ndim == 2:
        header = "Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM needs an (H, W) or (H, W, 3) array")
    h, w = a.shape[:2]
    path = Path(path)
    tmp = _atomic_target(path)
    with open(tmp, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())
    os.replace(tmp, path)


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"{path} is not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        shape = (h, w, 3) if header == b"PF" else (h, w)
        data = np.frombuffer(fh.read(), dtype=dtype).reshape(shape)
    return data[::-1].astype(np.float32)


def depth_to_gray(depth, near=None, far=None) -> np.ndarray:
    """Map depth to [0, 1] with near = white, far = black."""
    d = np.asarray(depth, dtype=np.float64)
    lo = d.min() if near is None else near
    hi = d.max() if far is None else far
    if hi <= lo:
        return np.zeros_like(d)
    return 1.0 - np.clip((d - lo) / (hi - lo), 0.0, 1.0)
