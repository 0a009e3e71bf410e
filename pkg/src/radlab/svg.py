"""Tiny SVG line and scatter plots. CSV files are the real outputs; these are for eyeballing."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H, PAD, RIGHT = 660, 380, 60, 140


def _finite(vals):
    return [v for v in vals if v is not None and math.isfinite(v)]


def _scale(lo, hi, a, b, log=False):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    if hi <= lo:
        hi = lo + 1.0

    def f(v):
        v = math.log10(v) if log else v
        return a + (v - lo) / (hi - lo) * (b - a)

    return f


def plot(path, series: dict, xlabel: str, ylabel: str, title: str = "", logx=False, lines=True) -> None:
    """``series`` maps a label to (xs, ys). Non-finite points are skipped."""
    xs = _finite([x for s in series.values() for x in s[0]])
    ys = _finite([y for s in series.values() for y in s[1]])
    if not xs or not ys:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    ypad = 0.05 * (max(ys) - min(ys) or 1.0)
    fx = _scale(min(xs), max(xs), PAD, W - RIGHT, logx)
    fy = _scale(min(ys) - ypad, max(ys) + ypad, H - PAD, PAD)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - RIGHT}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{H / 2}" text-anchor="middle" transform="rotate(-90 15 {H / 2})">{escape(ylabel)}</text>',
        f'<text x="{W / 2}" y="25" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for v in sorted(set(xs)):
        out.append(f'<text x="{fx(v):.1f}" y="{H - PAD + 16}" text-anchor="middle">{v:g}</text>')
    lo, hi = min(ys), max(ys)
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        out.append(f'<text x="{PAD - 6}" y="{fy(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    for i, (label, (sx, sy)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = [(fx(x), fy(y)) for x, y in zip(sx, sy) if y is not None and math.isfinite(y)]
        if lines and len(pts) > 1:
            d = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3.5" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 10}" y="{PAD + 16 * i}" fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
