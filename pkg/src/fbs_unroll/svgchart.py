"""Minimal self-contained SVG line charts (polyline + axes + labels).

No plotting dependency: the depth-sweep and stability figures are simple
line charts, and a hand-rolled writer keeps the output byte-reproducible.
"""

from __future__ import annotations

import math

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / count))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= count:
            step *= mult
            break
    t0 = math.ceil(lo / step) * step
    out = []
    t = t0
    while t <= hi + 1e-12 * span:
        out.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return out


def _fmt_tick(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.6g}"


def render_line_chart(series, x_label="", y_label="", title="",
                      width=640, height=420, log_y=False):
    """Render [(name, xs, ys), ...] to an SVG string."""
    if not series:
        raise ValueError("at least one series is required")
    pad_l, pad_r, pad_t, pad_b = 64, 16, 34, 46
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def ty(v):
        if log_y:
            if v <= 0:
                raise ValueError("log-scale y requires positive values")
            return math.log10(v)
        return v

    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [ty(y) for _, _, ys in series for y in ys if math.isfinite(y)]
    if not all_x or not all_y:
        raise ValueError("series contain no finite points")
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return pad_l + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return pad_t + (y_hi - ty(y)) / (y_hi - y_lo) * ph

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
                     f'font-size="13">{title}</text>')
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{pad_t + ph}" x2="{x:.2f}" '
                     f'y2="{pad_t + ph + 4}" stroke="#333"/>')
        parts.append(f'<text x="{x:.2f}" y="{pad_t + ph + 16}" '
                     f'text-anchor="middle">{_fmt_tick(t)}</text>')
    y_ticks = _ticks(y_lo, y_hi)
    for t in y_ticks:
        v = 10.0 ** t if log_y else t
        y = pad_t + (y_hi - t) / (y_hi - y_lo) * ph
        parts.append(f'<line x1="{pad_l - 4}" y1="{y:.2f}" x2="{pad_l}" '
                     f'y2="{y:.2f}" stroke="#333"/>')
        parts.append(f'<text x="{pad_l - 7}" y="{y + 3.5:.2f}" '
                     f'text-anchor="end">{_fmt_tick(v)}</text>')
    if x_label:
        parts.append(f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" '
                     f'text-anchor="middle">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{y_label}</text>')
    for i, (name, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys)
                       if math.isfinite(y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        if name:
            ly = pad_t + 14 + 14 * i
            parts.append(f'<line x1="{pad_l + pw - 90}" y1="{ly - 4}" '
                         f'x2="{pad_l + pw - 70}" y2="{ly - 4}" stroke="{color}" '
                         'stroke-width="1.5"/>')
            parts.append(f'<text x="{pad_l + pw - 66}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
