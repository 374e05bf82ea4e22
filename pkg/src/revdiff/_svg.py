"""Tiny deterministic SVG line plots; a pure function of the data passed in.

Diagnostic quality only: fixed palette, linear or log10 axes, no text
measurement.  Output bytes depend on nothing but the arguments, so plots are
reproducible alongside the CSV files they render.
"""

from __future__ import annotations

import math

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 34, 52


def _ticks(lo: float, hi: float, log: bool):
    if log:
        first = math.ceil(lo - 1e-9)
        last = math.floor(hi + 1e-9)
        if last >= first:
            return [float(p) for p in range(first, last + 1)]
        return [lo, hi]
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / 5.0
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1.0, 2.0, 5.0, 10.0) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * step:
        out.append(v)
        v += step
    return out or [lo]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_plot(path, series, *, title="", xlabel="", ylabel="", log_x=False, log_y=False):
    """Write a line plot of [(label, xs, ys), ...] to ``path``."""

    def tx(v):
        return math.log10(v) if log_x else v

    def ty(v):
        return math.log10(v) if log_y else v

    xs_all = [tx(x) for _, xs, _ in series for x in xs]
    ys_all = [ty(y) for _, _, ys in series for y in ys]
    if not xs_all:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    def px(v):
        return _ML + (v - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (v - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'font-family="monospace" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
    ]
    for v in _ticks(x_lo, x_hi, log_x):
        x = px(v)
        label = _fmt(10.0**v) if log_x else _fmt(v)
        parts.append(f'<line x1="{x:.1f}" y1="{_H - _MB}" x2="{x:.1f}" y2="{_H - _MB + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{_H - _MB + 16}" text-anchor="middle">{label}</text>')
    for v in _ticks(y_lo, y_hi, log_y):
        y = py(v)
        label = _fmt(10.0**v) if log_y else _fmt(v)
        parts.append(f'<line x1="{_ML - 4}" y1="{y:.1f}" x2="{_ML}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 7}" y="{y + 3:.1f}" text-anchor="end">{label}</text>')
    parts.append(
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        f'fill="none" stroke="black"/>'
    )
    parts.append(f'<text x="{_W // 2}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>')
    parts.append(
        f'<text x="16" y="{_H // 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_H // 2})">{ylabel}</text>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(tx(x)):.2f},{py(ty(y)):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(tx(x)):.2f}" cy="{py(ty(y)):.2f}" r="2.5" fill="{color}"/>')
        if label:
            ly = _MT + 14 + 14 * i
            parts.append(f'<line x1="{_W - _MR - 90}" y1="{ly - 4}" x2="{_W - _MR - 70}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{_W - _MR - 64}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
