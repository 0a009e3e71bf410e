"""Transforms between linear RGB and the representation color spaces.

Every space maps linear values in [0, 1] onto [0, 1]. All arithmetic is done in
float64; callers may cast the result back to their storage precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SRGB_GAMMA = 2.22
TRUELOG_FLOOR = 1.0 / 255.0
_LN255 = math.log(255.0)
_E_MINUS_1 = math.e - 1.0

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

KINDS = ("linear", "srgb", "gplog", "truelog", "scaledlog")


class InvalidInput(ValueError):
    """Raised for non-finite or out-of-range color values."""


@dataclass(frozen=True)
class ColorSpace:
    kind: str
    k: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown color space {self.kind!r}")
        if self.kind == "scaledlog":
            if self.k is None or not math.isfinite(self.k) or self.k <= 0:
                raise InvalidInput("ScaledLog requires a finite k > 0")
        elif self.k is not None:
            raise InvalidInput(f"{self.kind} takes no scale coefficient")

    @property
    def x_lo(self) -> float:
        return TRUELOG_FLOOR if self.kind == "truelog" else 0.0

    def __str__(self) -> str:
        if self.kind == "scaledlog":
            return f"scaledlog:{self.k:g}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "ColorSpace":
        """Parse the canonical string form (``gplog``, ``scaledlog:25500``...)."""
        text = text.strip().lower()
        if text in PRESETS:
            return PRESETS[text]
        if text.startswith("scaledlog:"):
            try:
                k = float(text.split(":", 1)[1])
            except ValueError:
                raise InvalidInput(f"bad ScaledLog coefficient in {text!r}") from None
            return cls("scaledlog", k)
        return cls(text)


LINEAR = ColorSpace("linear")
SRGB = ColorSpace("srgb")
GPLOG = ColorSpace("gplog")
TRUELOG = ColorSpace("truelog")
LOG100 = ColorSpace("scaledlog", 255.0 * 100.0)
LOG01 = ColorSpace("scaledlog", 255.0 * 0.1)

PRESETS = {
    "linear": LINEAR,
    "srgb": SRGB,
    "gplog": GPLOG,
    "truelog": TRUELOG,
    "log100": LOG100,
    "log01": LOG01,
}

ALL_SPACES = (LINEAR, SRGB, GPLOG, TRUELOG, LOG100)


def _as_array(x):
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidInput("non-finite color value")
    return a


def _out(a, like):
    return float(a) if np.ndim(like) == 0 else a


def forward_transform(space: ColorSpace, x):
    """Encode linear values into ``space``. Inputs are clamped to [0, 1]."""
    a = np.clip(_as_array(x), 0.0, 1.0)
    kind = space.kind
    if kind == "linear":
        y = a.copy()
    elif kind == "srgb":
        y = a ** (1.0 / SRGB_GAMMA)
    elif kind == "gplog":
        y = np.log1p(a * _E_MINUS_1)
    elif kind == "truelog":
        # ln(max(255x, 1)) / ln(255): the normalisation cancels every constant
        y = np.log(np.maximum(255.0 * a, 1.0)) / _LN255
    else:
        y = np.log1p(space.k * a) / math.log1p(space.k)
    return _out(np.clip(y, 0.0, 1.0), x)


def inverse_transform(space: ColorSpace, y):
    """Decode ``space`` values back to linear RGB."""
    a = _as_array(y)
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise InvalidInput("encoded value outside [0, 1]")
    kind = space.kind
    if kind == "linear":
        x = a.copy()
    elif kind == "srgb":
        x = a**SRGB_GAMMA
    elif kind == "gplog":
        x = np.expm1(a) / _E_MINUS_1
    elif kind == "truelog":
        x = np.exp((a - 1.0) * _LN255)
    else:
        x = np.expm1(a * math.log1p(space.k)) / space.k
    return _out(x, y)


def transform_derivative(space: ColorSpace, x):
    """d forward / dx. Zero inside the TrueLog clamp region x < 1/255."""
    a = _as_array(x)
    kind = space.kind
    if kind == "linear":
        d = np.ones_like(a)
    elif kind == "srgb":
        with np.errstate(divide="ignore"):
            d = (1.0 / SRGB_GAMMA) * a ** (1.0 / SRGB_GAMMA - 1.0)
    elif kind == "gplog":
        d = _E_MINUS_1 / (1.0 + a * _E_MINUS_1)
    elif kind == "truelog":
        safe = np.maximum(a, TRUELOG_FLOOR)
        d = np.where(a < TRUELOG_FLOOR, 0.0, 1.0 / (safe * _LN255))
    else:
        d = space.k / ((1.0 + space.k * a) * math.log1p(space.k))
    return _out(d, x)


def inverse_derivative(space: ColorSpace, y):
    """d inverse / dy, used to backpropagate through the representation decode."""
    a = _as_array(y)
    kind = space.kind
    if kind == "linear":
        d = np.ones_like(a)
    elif kind == "srgb":
        d = SRGB_GAMMA * np.maximum(a, 0.0) ** (SRGB_GAMMA - 1.0)
    elif kind == "gplog":
        d = np.exp(a) / _E_MINUS_1
    elif kind == "truelog":
        d = _LN255 * np.exp((a - 1.0) * _LN255)
    else:
        lk = math.log1p(space.k)
        d = lk * np.exp(a * lk) / space.k
    return _out(d, y)


@dataclass(frozen=True)
class ColorValue:
    r: float
    g: float
    b: float
    space: ColorSpace = LINEAR

    def __post_init__(self):
        for c in (self.r, self.g, self.b):
            if not math.isfinite(c):
                raise InvalidInput("non-finite channel")
            if c < 0.0 or c > 1.0:
                raise InvalidInput(f"channel {c} outside [0, 1]")

    def rgb(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)


def convert(c: ColorValue, target: ColorSpace) -> ColorValue:
    """Two-step conversion: source space to linear, then linear to ``target``."""
    if c.space == target:
        return c
    lin = inverse_transform(c.space, c.rgb())
    out = forward_transform(target, lin)
    return ColorValue(*(float(v) for v in out), space=target)


def convert_array(values, source: ColorSpace, target: ColorSpace) -> np.ndarray:
    """Array version of :func:`convert`; values are clamped into [0, 1] first."""
    a = np.clip(_as_array(values), 0.0, 1.0)
    if source == target:
        return a
    return forward_transform(target, inverse_transform(source, a))


def luminance(c) -> float | np.ndarray:
    """Y = 0.299 R + 0.587 G + 0.114 B on linear RGB.

    Accepts a linear :class:`ColorValue` or an array whose last axis is RGB.
    """
    if isinstance(c, ColorValue):
        if c.space != LINEAR:
            raise InvalidInput("luminance expects a linear-space color")
        return float(np.dot(LUMA_WEIGHTS, c.rgb()))
    a = _as_array(c)
    return a @ np.asarray(LUMA_WEIGHTS)
