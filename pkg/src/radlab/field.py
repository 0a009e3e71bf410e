"""Learnable radiance field: positional encoding, optional dense feature grid, small MLP.

Gradients are computed by explicit reverse-mode passes over cached forward
activations; every parameter lives in one flat vector so the optimizer can
treat the model as a single array.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .colorspace import TRUELOG, ColorSpace


class FieldNumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GridConfig:
    budget: int  # total feature entries allowed
    feature_dim: int = 4
    resolution: int | None = None  # derived from the budget when None

    def __post_init__(self):
        if self.feature_dim < 1 or self.budget < 1:
            raise ValueError("grid budget and feature_dim must be positive")
        if self.resolution is None:
            r = int(round((self.budget / self.feature_dim) ** (1.0 / 3.0))) + 1
            while r**3 * self.feature_dim > self.budget:
                r -= 1
            object.__setattr__(self, "resolution", r)
        if self.resolution < 2:
            raise ValueError(f"budget {self.budget} too small for a 2^3 grid of {self.feature_dim} features")
        if self.resolution**3 * self.feature_dim > self.budget:
            raise ValueError("grid resolution exceeds the entry budget")

    @property
    def entries(self) -> int:
        return self.resolution**3 * self.feature_dim


@dataclass(frozen=True)
class ModelConfig:
    mlp_width: int = 64
    mlp_depth: int = 2
    pe_frequencies: int = 4
    grid: GridConfig | None = None
    representation_space: ColorSpace = TRUELOG
    seed: int = 0
    use_viewdirs: bool = False
    bounds: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.mlp_width < 1 or self.mlp_depth < 1:
            raise ValueError("mlp_width and mlp_depth must be >= 1")
        if self.pe_frequencies < 0:
            raise ValueError("pe_frequencies must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def input_dim(self) -> int:
        n = 3 + 6 * self.pe_frequencies
        if self.grid is not None:
            n += self.grid.feature_dim
        return n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["representation_space"] = str(self.representation_space)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["representation_space"] = ColorSpace.parse(d["representation_space"])
        if d.get("grid") is not None:
            d["grid"] = GridConfig(**d["grid"])
        return cls(**d)


def param_layout(cfg: ModelConfig) -> dict[str, tuple[int, tuple[int, ...]]]:
    """Name -> (offset, shape) for every block of the flat parameter vector."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    fan_in = cfg.input_dim
    for i in range(cfg.mlp_depth):
        shapes.append((f"W{i}", (fan_in, cfg.mlp_width)))
        shapes.append((f"b{i}", (cfg.mlp_width,)))
        fan_in = cfg.mlp_width
    head_in = cfg.mlp_width + (3 if cfg.use_viewdirs else 0)
    shapes += [("Wc", (head_in, 3)), ("bc", (3,)), ("Wd", (cfg.mlp_width, 1)), ("bd", (1,))]
    if cfg.grid is not None:
        r = cfg.grid.resolution
        shapes.append(("grid", (r, r, r, cfg.grid.feature_dim)))
    layout = {}
    off = 0
    for name, shape in shapes:
        layout[name] = (off, shape)
        off += math.prod(shape)
    return layout


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for _, s in param_layout(cfg).values())


@dataclass
class RadianceModel:
    config: ModelConfig
    params: np.ndarray
    layout: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.layout = param_layout(self.config)
        n = param_count(self.config)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")

    def view(self, name: str, vec: np.ndarray | None = None) -> np.ndarray:
        off, shape = self.layout[name]
        v = self.params if vec is None else vec
        return v[off : off + math.prod(shape)].reshape(shape)

    @property
    def grid(self) -> np.ndarray | None:
        return self.view("grid") if "grid" in self.layout else None

    def copy(self) -> "RadianceModel":
        return RadianceModel(self.config, self.params.copy())

    def astype(self, dtype: str) -> "RadianceModel":
        return RadianceModel(replace(self.config, dtype=dtype), self.params.astype(dtype))


def init_model(cfg: ModelConfig) -> RadianceModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for layers, small uniform grid features."""
    rng = np.random.default_rng(cfg.seed)
    layout = param_layout(cfg)
    params = np.empty(param_count(cfg), dtype=np.float64)
    fan_in = {}
    for name, (_, shape) in layout.items():
        if name.startswith("W"):
            fan_in[name[1:]] = shape[0]
    for name, (off, shape) in layout.items():
        n = math.prod(shape)
        if name == "grid":
            bound = 0.1
        else:
            bound = 1.0 / math.sqrt(fan_in[name[1:]])
        params[off : off + n] = rng.uniform(-bound, bound, n)
    return RadianceModel(cfg, params.astype(cfg.dtype))


# -- encodings -------------------------------------------------------------------


def positional_encoding(p, L: int) -> np.ndarray:
    """``[p, sin(2^k pi p), cos(2^k pi p)]`` for k < L; output length 3 + 6L."""
    p = np.asarray(p)
    if L == 0:
        return p.copy()
    freqs = (2.0 ** np.arange(L)) * np.pi
    ang = p[..., None, :] * freqs[:, None].astype(p.dtype)  # (..., L, 3)
    ang = ang.reshape(*p.shape[:-1], 3 * L)
    return np.concatenate([p, np.sin(ang), np.cos(ang)], axis=-1)


def _grid_corners(p, resolution: int, bounds: float):
    """Flat corner indices (8, N) and trilinear weights (8, N) for points in world space."""
    q = (np.clip(p / bounds, -1.0, 1.0) + 1.0) * 0.5 * (resolution - 1)
    i0 = np.clip(np.floor(q), 0, resolution - 2).astype(np.int64)
    f = q - i0
    idx, wts = [], []
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                ii = ((i0[:, 0] + dx) * resolution + (i0[:, 1] + dy)) * resolution + (i0[:, 2] + dz)
                idx.append(ii)
                wts.append(wx * wy * wz)
    return np.stack(idx), np.stack(wts)


def grid_encode(p, grid: np.ndarray, bounds: float = 1.0) -> np.ndarray:
    """Trilinear interpolation of a dense (r, r, r, F) grid spanning [-bounds, bounds]^3."""
    p = np.atleast_2d(np.asarray(p))
    r, F = grid.shape[0], grid.shape[-1]
    idx, w = _grid_corners(p, r, bounds)
    flat = grid.reshape(-1, F)
    out = np.zeros((p.shape[0], F), dtype=grid.dtype)
    for c in range(8):
        out += w[c][:, None].astype(grid.dtype) * flat[idx[c]]
    return out


def _grid_scatter(idx, w, g, resolution):
    """Adjoint of :func:`grid_encode` w.r.t. the grid features."""
    F = g.shape[1]
    cells = resolution**3
    flat_idx = idx.reshape(-1)
    out = np.empty((cells, F), dtype=np.float64)
    for f in range(F):
        out[:, f] = np.bincount(flat_idx, weights=(w * g[:, f][None, :]).reshape(-1), minlength=cells)
    return out


# -- forward / backward -----------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def field_forward(model: RadianceModel, points, dirs=None):
    """Batched evaluation. Returns (rep_color (N,3), density (N,), cache)."""
    cfg = model.config
    dt = model.params.dtype
    pts = np.asarray(points, dtype=dt).reshape(-1, 3)
    feats = [positional_encoding(np.clip(pts / cfg.bounds, -1.0, 1.0), cfg.pe_frequencies)]
    cache = {"n": pts.shape[0]}
    if cfg.grid is not None:
        idx, w = _grid_corners(pts.astype(np.float64), cfg.grid.resolution, cfg.bounds)
        flat = model.grid.reshape(-1, cfg.grid.feature_dim)
        gf = np.zeros((pts.shape[0], cfg.grid.feature_dim), dtype=dt)
        for c in range(8):
            gf += w[c][:, None].astype(dt) * flat[idx[c]]
        feats.append(gf)
        cache["grid_idx"], cache["grid_w"] = idx, w
    h = np.concatenate(feats, axis=-1) if len(feats) > 1 else feats[0]
    acts = [h]
    for i in range(cfg.mlp_depth):
        h = np.maximum(h @ model.view(f"W{i}") + model.view(f"b{i}"), 0)
        acts.append(h)
    head = h
    if cfg.use_viewdirs:
        if dirs is None:
            raise ValueError("model conditions on view direction; dirs required")
        d = np.asarray(dirs, dtype=dt).reshape(-1, 3)
        head = np.concatenate([h, d], axis=-1)
    craw = head @ model.view("Wc") + model.view("bc")
    draw = (h @ model.view("Wd") + model.view("bd"))[:, 0]
    with np.errstate(invalid="ignore", over="ignore"):
        color = _sigmoid(craw)
        density = np.logaddexp(0, draw)
    if not (np.all(np.isfinite(color)) and np.all(np.isfinite(density))):
        raise FieldNumericError(_diagnostics(model))
    cache.update(acts=acts, head=head, color=color, draw=draw)
    return color, density, cache


def _diagnostics(model: RadianceModel) -> str:
    parts = []
    for name in model.layout:
        v = model.view(name)
        parts.append(f"{name}: finite={np.all(np.isfinite(v))} max|.|={np.nanmax(np.abs(v)):.3g}")
    return "non-finite field activations; " + "; ".join(parts)


def field_backward(model: RadianceModel, cache, dcolor, ddensity) -> np.ndarray:
    """Reverse-mode gradient of ``sum(dcolor*color) + sum(ddensity*density)`` w.r.t. params."""
    cfg = model.config
    n = cache["n"]
    dcolor = np.asarray(dcolor).reshape(n, 3)
    ddensity = np.asarray(ddensity).reshape(n)
    if dcolor.shape != (n, 3) or ddensity.shape != (n,):
        raise ValueError("upstream gradient shape does not match the forward batch")
    dt = model.params.dtype
    grad = np.zeros(model.params.shape, dtype=np.float64)

    def put(name, value):
        off, shape = model.layout[name]
        grad[off : off + math.prod(shape)] = np.asarray(value, dtype=np.float64).reshape(-1)

    c = cache["color"]
    g_craw = (dcolor * (c * (1 - c))).astype(dt)
    g_draw = (ddensity * _sigmoid(cache["draw"])).astype(dt)[:, None]
    acts = cache["acts"]
    top = acts[-1]
    put("Wc", cache["head"].T @ g_craw)
    put("bc", g_craw.sum(0))
    put("Wd", top.T @ g_draw)
    put("bd", g_draw.sum(0))
    Wc = model.view("Wc")[: cfg.mlp_width]
    gh = g_craw @ Wc.T + g_draw @ model.view("Wd").T
    for i in reversed(range(cfg.mlp_depth)):
        gz = gh * (acts[i + 1] > 0)
        put(f"W{i}", acts[i].T @ gz)
        put(f"b{i}", gz.sum(0))
        if i > 0 or cfg.grid is not None:
            gh = gz @ model.view(f"W{i}").T
    if cfg.grid is not None:
        F = cfg.grid.feature_dim
        g_feat = gh[:, -F:].astype(np.float64)
        put("grid", _grid_scatter(cache["grid_idx"], cache["grid_w"], g_feat, cfg.grid.resolution))
    return grad


def field_eval(model: RadianceModel, p, direction=None):
    """Single or batched evaluation without keeping the backward cache."""
    single = np.ndim(p) == 1
    color, density, _ = field_forward(model, np.atleast_2d(p), None if direction is None else np.atleast_2d(direction))
    if single:
        return color[0], float(density[0])
    return color, density


# -- checkpoints ----------------------------------------------------------------

_MAGIC = b"RLCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: RadianceModel, path) -> None:
    """Binary layout: magic, u32 version, u32 json length, config json, raw params."""
    meta = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(np.ascontiguousarray(model.params, dtype=model.params.dtype.newbyteorder("<")).tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> RadianceModel:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a radiance model checkpoint")
    version, n = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig.from_dict(json.loads(data[12 : 12 + n]))
    params = np.frombuffer(data[12 + n :], dtype=np.dtype(cfg.dtype).newbyteorder("<")).astype(cfg.dtype)
    return RadianceModel(cfg, params)
