"""Synthetic scenes obeying the bi-illuminant body reflection model.

A point on a material with body reflectance ``R`` that receives a fraction
``gamma`` of the direct light has linear color ``R * (A + gamma * D)``. Scenes
are collections of solid spheres and boxes plus a shadow field that sets
``gamma`` per point; they double as the analytic radiance oracle for dataset
rendering.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCENE_FORMAT_VERSION = 1
DEFAULT_DENSITY = 500.0


class SceneGenerationError(RuntimeError):
    pass


def _triple(v, name):
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must have 3 channels")
    return a


@dataclass(frozen=True)
class Material:
    reflectance: tuple[float, float, float]

    def __post_init__(self):
        r = _triple(self.reflectance, "reflectance")
        if np.any(r <= 0.0) or np.any(r > 1.0):
            raise ValueError("body reflectance channels must lie in (0, 1]")


@dataclass(frozen=True)
class Illumination:
    ambient: tuple[float, float, float]
    direct: tuple[float, float, float]

    def __post_init__(self):
        a = _triple(self.ambient, "ambient")
        d = _triple(self.direct, "direct")
        if np.any(a <= 0.0):
            raise ValueError("ambient channels must be > 0")
        if np.any(d < 0.0):
            raise ValueError("direct channels must be >= 0")
        if np.any(a + d > 1.0 + 1e-12):
            raise ValueError("ambient + direct must not exceed 1 per channel")

    def scaled(self, s: float) -> "Illumination":
        return Illumination(
            tuple(float(v) * s for v in self.ambient),
            tuple(float(v) * s for v in self.direct),
        )


def body_reflection(m: Material, illum: Illumination, gamma) -> np.ndarray:
    """Linear color ``R_B * (A + gamma * D)``; vectorised over ``gamma``."""
    g = np.asarray(gamma, dtype=np.float64)
    if np.any(~np.isfinite(g)) or np.any(g < 0.0) or np.any(g > 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    r = np.asarray(m.reflectance, dtype=np.float64)
    a = np.asarray(illum.ambient, dtype=np.float64)
    d = np.asarray(illum.direct, dtype=np.float64)
    return r * (a + g[..., None] * d)


def log_illumination_span(illum: Illumination, gamma) -> np.ndarray:
    """``ln(A + gamma D) - ln(A)``: the shadow-to-lit offset shared by all materials."""
    g = np.asarray(gamma, dtype=np.float64)
    a = np.asarray(illum.ambient, dtype=np.float64)
    d = np.asarray(illum.direct, dtype=np.float64)
    return np.log(a + g[..., None] * d) - np.log(a)


@dataclass(frozen=True)
class ShadowField:
    """Fraction of direct light as a function of position.

    ``constant``: gamma = value everywhere. ``halfspace``: 1 where
    ``normal . p >= start`` else 0. ``ramp``: 0 below ``start``, 1 above
    ``end``, linear in between.
    """

    kind: str = "constant"
    normal: tuple[float, float, float] = (1.0, 0.0, 0.0)
    start: float = 0.0
    end: float = 0.0
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "halfspace", "ramp"):
            raise ValueError(f"unknown shadow field {self.kind!r}")
        if self.kind == "ramp" and not self.end > self.start:
            raise ValueError("ramp needs end > start")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("constant gamma must lie in [0, 1]")

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "constant":
            return np.full(p.shape[:-1], self.value)
        n = np.asarray(self.normal, dtype=np.float64)
        s = p @ (n / np.linalg.norm(n))
        if self.kind == "halfspace":
            return (s >= self.start).astype(np.float64)
        return np.clip((s - self.start) / (self.end - self.start), 0.0, 1.0)


@dataclass(frozen=True)
class Primitive:
    shape: str  # "sphere" or "box"
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # sphere: (r, r, r); box: half extents
    material: Material

    def contains(self, p: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        if self.shape == "sphere":
            return np.sum((p - c) ** 2, axis=-1) <= self.size[0] ** 2
        return np.all(np.abs(p - c) <= np.asarray(self.size), axis=-1)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Entry distance along each ray, ``inf`` on a miss; rays starting inside return 0."""
        c = np.asarray(self.center)
        if self.shape == "sphere":
            oc = o - c
            b = np.sum(oc * d, axis=-1)
            cc = np.sum(oc * oc, axis=-1) - self.size[0] ** 2
            disc = b * b - cc
            with np.errstate(invalid="ignore"):
                sq = np.sqrt(np.maximum(disc, 0.0))
            t0, t1 = -b - sq, -b + sq
        else:
            h = np.asarray(self.size)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                ta = (c - h - o) * inv
                tb = (c + h - o) * inv
            ta = np.where(np.isnan(ta), -np.inf, ta)
            tb = np.where(np.isnan(tb), np.inf, tb)
            t0 = np.max(np.minimum(ta, tb), axis=-1)
            t1 = np.min(np.maximum(ta, tb), axis=-1)
            disc = t1 - t0
        hit = (disc >= 0.0) & (t1 >= 0.0)
        return np.where(hit, np.maximum(t0, 0.0), np.inf)

    def fits(self, half: float) -> bool:
        c = np.abs(np.asarray(self.center))
        return bool(np.all(c + np.asarray(self.size) <= half + 1e-12))


@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...]
    illumination: Illumination
    shadow: ShadowField = field(default_factory=ShadowField)
    bounds: float = 1.0  # world box is [-bounds, bounds]^3
    density: float = DEFAULT_DENSITY

    def __post_init__(self):
        for prim in self.primitives:
            if not prim.fits(self.bounds):
                raise SceneGenerationError("primitive extends outside the scene bounds")

    def gamma(self, p) -> np.ndarray:
        return self.shadow(p)

    def radiance(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Oracle (linear color, density) at points ``p`` of shape (..., 3).

        The first primitive containing a point owns it. Empty space is
        black and transparent.
        """
        p = np.asarray(p, dtype=np.float64)
        color = np.zeros(p.shape, dtype=np.float64)
        sigma = np.zeros(p.shape[:-1], dtype=np.float64)
        owned = np.zeros(p.shape[:-1], dtype=bool)
        for prim in self.primitives:
            inside = prim.contains(p) & ~owned
            if not np.any(inside):
                continue
            g = np.clip(self.shadow(p[inside]), 0.0, 1.0)
            color[inside] = body_reflection(prim.material, self.illumination, g)
            sigma[inside] = self.density
            owned |= inside
        return color, sigma

    def first_hit(self, origins, dirs, near=0.0, far=np.inf):
        """Nearest surface distance and primitive index per ray (``-1`` on a miss)."""
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        best = np.full(o.shape[:-1], np.inf)
        idx = np.full(o.shape[:-1], -1, dtype=np.int64)
        for i, prim in enumerate(self.primitives):
            t = prim.intersect(o, d)
            t = np.where((t >= near) & (t <= far), t, np.inf)
            closer = t < best
            best = np.where(closer, t, best)
            idx = np.where(closer, i, idx)
        return best, idx

    def render_analytic(self, origins, dirs, near, far, white_background=True):
        """Exact surface render: (linear color, depth, hit mask) per ray."""
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        t, idx = self.first_hit(o, d, near, far)
        hit = idx >= 0
        bg = 1.0 if white_background else 0.0
        color = np.full(o.shape, bg)
        for i, prim in enumerate(self.primitives):
            sel = idx == i
            if np.any(sel):
                pts = o[sel] + t[sel, None] * d[sel]
                g = np.clip(self.shadow(pts), 0.0, 1.0)
                color[sel] = body_reflection(prim.material, self.illumination, g)
        return color, np.where(hit, t, far), hit


def scene_radiance(s: Scene, p, direction=None):
    """Oracle query; the view direction is accepted and ignored (Lambertian)."""
    return s.radiance(p)


# -- recipes ---------------------------------------------------------------


@dataclass
class SceneRecipe:
    primitives: int = 5
    shape: str = "sphere"  # sphere | box | mixed
    size_min: float = 0.15
    size_max: float = 0.35
    reflectance_min: float = 0.1
    reflectance_max: float = 0.9
    ambient: tuple[float, float, float] = (0.12, 0.12, 0.18)
    direct: tuple[float, float, float] = (0.85, 0.8, 0.7)
    illumination_scale: float = 1.0
    shadow: str = "ramp"
    shadow_normal: tuple[float, float, float] = (1.0, 0.0, 0.0)
    shadow_start: float = -0.3
    shadow_end: float = 0.3
    shadow_value: float = 1.0
    floor: bool = True
    bounds: float = 1.0
    density: float = DEFAULT_DENSITY
    max_attempts: int = 2000

    @classmethod
    def from_text(cls, text: str) -> "SceneRecipe":
        """Parse ``key = value`` lines; ``#`` starts a comment, tuples are comma separated."""
        recipe = cls()
        types = {f: type(getattr(recipe, f)) for f in recipe.__dataclass_fields__}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"recipe line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"recipe line {lineno}: unknown key {key!r}")
            setattr(recipe, key, _parse_value(types[key], value, lineno))
        return recipe

    @classmethod
    def load(cls, path) -> "SceneRecipe":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _parse_value(kind, value, lineno):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind is tuple:
            parts = tuple(float(x) for x in value.split(","))
            if len(parts) != 3:
                raise ValueError(value)
            return parts
        return kind(value)
    except ValueError:
        raise ValueError(f"recipe line {lineno}: bad value {value!r}") from None


FLOOR_THICKNESS = 0.1


def generate_scene(recipe: SceneRecipe, seed: int) -> Scene:
    """Deterministically sample a scene from ``recipe``.

    Primitives are placed by rejection sampling so that they do not overlap
    and stay inside the bounds; running out of attempts raises
    :class:`SceneGenerationError`.
    """
    if recipe.shape not in ("sphere", "box", "mixed"):
        raise SceneGenerationError(f"unknown shape {recipe.shape!r}")
    if not 0 < recipe.size_min <= recipe.size_max:
        raise SceneGenerationError("need 0 < size_min <= size_max")
    if not 0 < recipe.reflectance_min <= recipe.reflectance_max <= 1:
        raise SceneGenerationError("need 0 < reflectance_min <= reflectance_max <= 1")
    rng = np.random.default_rng(seed)
    illum = Illumination(tuple(recipe.ambient), tuple(recipe.direct)).scaled(
        recipe.illumination_scale
    )
    half = recipe.bounds
    prims: list[Primitive] = []
    floor_top = -half
    if recipe.floor:
        refl = tuple(rng.uniform(recipe.reflectance_min, recipe.reflectance_max, 3))
        prims.append(
            Primitive(
                "box",
                (0.0, -half + FLOOR_THICKNESS / 2, 0.0),
                (half, FLOOR_THICKNESS / 2, half),
                Material(refl),
            )
        )
        floor_top = -half + FLOOR_THICKNESS
    if recipe.primitives > 0 and 2 * recipe.size_min > min(2 * half, half - floor_top):
        raise SceneGenerationError("primitives cannot fit inside the bounds")

    placed = 0
    attempts = 0
    while placed < recipe.primitives:
        attempts += 1
        if attempts > recipe.max_attempts:
            raise SceneGenerationError(
                f"placed {placed} of {recipe.primitives} primitives before giving up"
            )
        shape = recipe.shape
        if shape == "mixed":
            shape = "sphere" if rng.random() < 0.5 else "box"
        if shape == "sphere":
            r = rng.uniform(recipe.size_min, recipe.size_max)
            size = (r, r, r)
        else:
            size = tuple(rng.uniform(recipe.size_min, recipe.size_max, 3))
        lo = np.array([-half, floor_top, -half]) + size
        hi = np.full(3, half) - size
        if np.any(lo > hi):
            continue
        center = rng.uniform(lo, hi)
        refl = tuple(rng.uniform(recipe.reflectance_min, recipe.reflectance_max, 3))
        cand = Primitive(shape, tuple(center), tuple(size), Material(refl))
        if any(_overlaps(cand, q) for q in prims):
            continue
        prims.append(cand)
        placed += 1

    shadow = ShadowField(
        kind=recipe.shadow,
        normal=tuple(recipe.shadow_normal),
        start=recipe.shadow_start,
        end=recipe.shadow_end,
        value=recipe.shadow_value,
    )
    return Scene(tuple(prims), illum, shadow, bounds=half, density=recipe.density)


def _overlaps(a: Primitive, b: Primitive) -> bool:
    # conservative bounding-box test
    ca, cb = np.asarray(a.center), np.asarray(b.center)
    return bool(np.all(np.abs(ca - cb) < np.asarray(a.size) + np.asarray(b.size)))


# -- serialisation -----------------------------------------------------------


def scene_to_dict(s: Scene) -> dict:
    return {
        "version": SCENE_FORMAT_VERSION,
        "bounds": s.bounds,
        "density": s.density,
        "illumination": {"ambient": list(s.illumination.ambient), "direct": list(s.illumination.direct)},
        "shadow": asdict(s.shadow),
        "primitives": [
            {
                "shape": p.shape,
                "center": list(p.center),
                "size": list(p.size),
                "reflectance": list(p.material.reflectance),
            }
            for p in s.primitives
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("version") != SCENE_FORMAT_VERSION:
        raise ValueError(f"unsupported scene format version {d.get('version')!r}")
    sh = d["shadow"]
    return Scene(
        tuple(
            Primitive(p["shape"], tuple(p["center"]), tuple(p["size"]), Material(tuple(p["reflectance"])))
            for p in d["primitives"]
        ),
        Illumination(tuple(d["illumination"]["ambient"]), tuple(d["illumination"]["direct"])),
        ShadowField(sh["kind"], tuple(sh["normal"]), sh["start"], sh["end"], sh["value"]),
        bounds=d["bounds"],
        density=d["density"],
    )


def save_scene(s: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(s), indent=1))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
