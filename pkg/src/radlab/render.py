"""Pinhole cameras, ray sampling and differentiable alpha compositing.

Per-sample field colors are decoded from the representation space to linear
RGB before compositing; the composited linear color is encoded to sRGB at the
very end. Both transforms are differentiated in :func:`render_rays_backward`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import colorspace as cs
from .colorspace import ColorSpace
from .field import RadianceModel, field_backward, field_forward

DEPTH_EPS = 1e-6
# pure power-law sRGB has an infinite slope at 0; the backward pass evaluates it no lower than this
SRGB_SLOPE_FLOOR = 1e-6


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    focal: float
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))  # world-from-camera
    near: float = 0.5
    far: float = 5.0
    name: str = ""

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.focal <= 0 or self.width < 1 or self.height < 1:
            raise ValueError("bad camera intrinsics")
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError("pose must be 4x4")
        object.__setattr__(self, "pose", pose)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            (self.width, self.height, self.focal, self.near, self.far, self.name)
            == (other.width, other.height, other.focal, other.near, other.far, other.name)
            and np.array_equal(self.pose, other.pose)
        )

    __hash__ = None


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")


@dataclass(frozen=True)
class RenderConfig:
    samples_per_ray: int = 32
    stratified: bool = False
    representation_space: ColorSpace = cs.TRUELOG
    white_background: bool = True

    def __post_init__(self):
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")


# -- rays ------------------------------------------------------------------------


def pixel_directions(cam: Camera, rows, cols) -> tuple[np.ndarray, np.ndarray]:
    """World-space origins and unit directions through pixel centers; camera looks down -z."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    x = (cols + 0.5 - cam.width / 2.0) / cam.focal
    y = -(rows + 0.5 - cam.height / 2.0) / cam.focal
    d = np.stack([x, y, -np.ones_like(x)], axis=-1)
    d = d @ cam.pose[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.pose[:3, 3], d.shape).copy()
    return o, d


def camera_rays(cam: Camera, pixel: tuple[int, int]) -> Ray:
    """Ray through the center of pixel ``(row, col)``."""
    i, j = pixel
    if not (0 <= i < cam.height and 0 <= j < cam.width):
        raise IndexError(f"pixel {pixel} outside {cam.height}x{cam.width} image")
    o, d = pixel_directions(cam, i, j)
    return Ray(o, d, cam.near, cam.far)


def image_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    return pixel_directions(cam, rows.reshape(-1), cols.reshape(-1))


def ray_jitter(seed: int, ray_ids, n: int) -> np.ndarray:
    """Uniform [0, 1) offsets keyed by (seed, ray id, sample index).

    Counter-based (splitmix64), so a ray's samples do not depend on how rays are
    batched or scheduled.
    """
    ids = np.asarray(ray_ids, dtype=np.uint64).reshape(-1, 1)
    k = np.arange(n, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        z = (np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)) ^ (ids * np.uint64(0xBF58476D1CE4E5B9)) ^ (
            k * np.uint64(0x94D049BB133111EB)
        )
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def sample_depths(near, far, n: int, jitter: np.ndarray | None = None):
    """Bin ``[near, far]`` into n equal segments; one sample per bin.

    Returns (t, delta) with shape (..., n). Without jitter samples sit at bin
    midpoints; with jitter in [0, 1) they are placed stratified within bins.
    """
    near = np.asarray(near, dtype=np.float64)[..., None]
    far = np.asarray(far, dtype=np.float64)[..., None]
    width = (far - near) / n
    k = np.arange(n, dtype=np.float64)
    offset = 0.5 if jitter is None else jitter
    t = near + (k + offset) * width
    delta = np.broadcast_to(width, t.shape).copy()
    return t, delta


def sample_along_ray(ray: Ray, n: int, stratified: bool = False, rng=None):
    """List of (t, delta) pairs along ``ray``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    jitter = None
    if stratified:
        rng = rng if rng is not None else np.random.default_rng(0)
        jitter = rng.random(n)
    t, d = sample_depths(ray.near, ray.far, n, jitter)
    return list(zip(t.tolist(), d.tolist()))


# -- compositing -------------------------------------------------------------------


def composite_weights(sigma, delta):
    """Transmittance-weighted alphas. Returns (weights, T_next) with T_next[i] = T_{i+1}."""
    s = sigma * delta
    cum = np.cumsum(s, axis=-1)
    t_next = np.exp(-cum)
    t_here = np.exp(-(cum - s))
    w = t_here - t_next  # = T_i * (1 - exp(-s_i)), stable for large s
    return w, t_next


def composite(colors_linear, densities, deltas, depths=None):
    """Alpha-composite samples along one or more rays.

    Returns (color, depth, opacity). ``depths`` defaults to the cumulative
    segment midpoints implied by ``deltas``.
    """
    c = np.asarray(colors_linear, dtype=np.float64)
    sigma = np.asarray(densities, dtype=np.float64)
    delta = np.asarray(deltas, dtype=np.float64)
    if c.shape[:-1] != sigma.shape or sigma.shape != delta.shape or sigma.shape[-1] < 1:
        raise ValueError("colors, densities and deltas must have matching non-empty lengths")
    if np.any(sigma < 0):
        raise ValueError("negative density")
    if depths is None:
        depths = np.cumsum(delta, axis=-1) - 0.5 * delta
    w, _ = composite_weights(sigma, delta)
    color = np.sum(w[..., None] * c, axis=-2)
    opacity = np.sum(w, axis=-1)
    depth = np.sum(w * np.asarray(depths), axis=-1) / np.maximum(opacity, DEPTH_EPS)
    if color.ndim == 1:
        return color, float(depth), float(opacity)
    return color, depth, opacity


# -- rendering ------------------------------------------------------------------------


class OracleField:
    """Wraps a scene as a field emitting exact encodings of its linear radiance."""

    def __init__(self, scene, space: ColorSpace):
        self.scene = scene
        self.space = space

    def __call__(self, points, dirs=None):
        lin, sigma = self.scene.radiance(points)
        return cs.forward_transform(self.space, lin), sigma


def _query(fld, pts, dirs):
    if isinstance(fld, RadianceModel):
        return field_forward(fld, pts, dirs)
    color, sigma = fld(pts, dirs)
    return np.asarray(color), np.asarray(sigma), None


def render_rays(fld, origins, dirs, near, far, rcfg: RenderConfig, jitter=None):
    """Render a batch of rays. Returns (srgb (R,3), cache for backward).

    ``fld`` is a :class:`RadianceModel` or any callable ``(points, dirs) ->
    (rep_color, density)``. The cache carries linear color, depth and opacity.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    R, S = o.shape[0], rcfg.samples_per_ray
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (R,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (R,))
    t, delta = sample_depths(near, far, S, jitter)
    pts = o[:, None, :] + t[..., None] * d[:, None, :]
    vd = np.broadcast_to(d[:, None, :], pts.shape)
    rep, sigma, fcache = _query(fld, pts.reshape(-1, 3), vd.reshape(-1, 3))
    rep = np.clip(np.asarray(rep, dtype=np.float64), 0.0, 1.0).reshape(R, S, 3)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(R, S)
    space = rcfg.representation_space
    lin = cs.inverse_transform(space, rep)  # component A
    w, t_next = composite_weights(sigma, delta)
    color = np.einsum("rs,rsc->rc", w, lin)
    opacity = w.sum(-1)
    depth = np.sum(w * t, axis=-1) / np.maximum(opacity, DEPTH_EPS)
    if rcfg.white_background:
        color = color + (1.0 - opacity)[:, None]
    color = np.clip(color, 0.0, 1.0)
    srgb = cs.forward_transform(cs.SRGB, color)  # component B
    cache = dict(
        fcache=fcache, rep=rep, lin=lin, sigma=sigma, delta=delta, w=w, t_next=t_next,
        color=color, opacity=opacity, depth=depth, space=space, white=rcfg.white_background,
    )
    return srgb, cache


def render_rays_backward(model: RadianceModel, cache, d_srgb) -> np.ndarray:
    """Parameter gradient of ``sum(d_srgb * srgb)`` for the batch in ``cache``."""
    g_srgb = np.asarray(d_srgb, dtype=np.float64)
    color = cache["color"]
    g_color = g_srgb * cs.transform_derivative(cs.SRGB, np.maximum(color, SRGB_SLOPE_FLOOR))
    w, t_next, lin = cache["w"], cache["t_next"], cache["lin"]
    g_op = -g_color.sum(-1) if cache["white"] else np.zeros(color.shape[0])
    # dC/ds_k = T_{k+1} c_k - sum_{i>k} w_i c_i ; same for opacity with c = 1
    wc = w[..., None] * lin
    after_c = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc
    after_w = np.cumsum(w[:, ::-1], axis=1)[:, ::-1] - w
    g_s = np.einsum("rc,rsc->rs", g_color, t_next[..., None] * lin - after_c)
    g_s += g_op[:, None] * (t_next - after_w)
    g_sigma = g_s * cache["delta"]
    g_lin = g_color[:, None, :] * w[..., None]
    g_rep = g_lin * cs.inverse_derivative(cache["space"], cache["rep"])
    return field_backward(model, cache["fcache"], g_rep.reshape(-1, 3), g_sigma.reshape(-1))


def render_pixel(fld, ray: Ray, rcfg: RenderConfig, rng=None) -> np.ndarray:
    """sRGB color of a single ray."""
    jitter = None
    if rcfg.stratified:
        rng = rng if rng is not None else np.random.default_rng(0)
        jitter = rng.random((1, rcfg.samples_per_ray))
    srgb, _ = render_rays(fld, ray.origin[None], ray.direction[None], ray.near, ray.far, rcfg, jitter)
    return srgb[0]


def _render_all(fld, cam: Camera, rcfg: RenderConfig, seed: int, chunk: int, workers: int):
    o, d = image_rays(cam)
    n = o.shape[0]
    starts = list(range(0, n, chunk))

    def job(s):
        e = min(s + chunk, n)
        jitter = ray_jitter(seed, np.arange(s, e), rcfg.samples_per_ray) if rcfg.stratified else None
        srgb, cache = render_rays(fld, o[s:e], d[s:e], cam.near, cam.far, rcfg, jitter)
        return srgb, cache["depth"], cache["opacity"]

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    srgb = np.concatenate([p[0] for p in parts]).reshape(cam.height, cam.width, 3)
    depth = np.concatenate([p[1] for p in parts]).reshape(cam.height, cam.width)
    opacity = np.concatenate([p[2] for p in parts]).reshape(cam.height, cam.width)
    return srgb, depth, opacity


def render_image(fld, cam: Camera, rcfg: RenderConfig, seed: int = 0, chunk: int = 4096, workers: int = 1):
    """sRGB image (H, W, 3). The worker count never changes the result."""
    return _render_all(fld, cam, rcfg, seed, chunk, workers)[0]


def render_depth(fld, cam: Camera, rcfg: RenderConfig, seed: int = 0, chunk: int = 4096, workers: int = 1):
    """Expected-depth map (H, W); empty rays divide by the DEPTH_EPS guard."""
    return _render_all(fld, cam, rcfg, seed, chunk, workers)[1]
