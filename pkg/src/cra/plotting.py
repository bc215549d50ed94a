"""Deterministic SVG learning-curve plots, no drawing dependencies.

Each series becomes a mean line with a +/-1 sigma band over seeds, x being
the mean environment-sample count at each evaluation point. Output is a
plain SVG string with fixed geometry and float formatting, so identical
inputs yield identical bytes (golden-file friendly).
"""

import math
import os

from .experiments import aggregate_rows, read_rows

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 62
MARGIN_RIGHT = 16
MARGIN_TOP = 20
MARGIN_BOTTOM = 46
PALETTE = (
    "#1b6ca8",
    "#c0392b",
    "#27805d",
    "#8e44ad",
    "#b9770e",
    "#515a5a",
)


class EmptyPlot(Exception):
    """No data rows to plot."""


def _fmt(value):
    return f"{value:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    power = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * power:
            step = mult * power
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + step * 1e-9:
        out.append(t)
        t += step
    return out


def _tick_label(value):
    if value == int(value):
        return str(int(value))
    return f"{value:g}"


def curves_from_rows(rows, label_prefix=""):
    """Aggregate CSV rows into plottable (label, [(x, mean, sd)]) pairs."""
    agg = aggregate_rows(rows)
    curves = []
    for series in sorted(agg):
        pts = [
            (samples, mean, math.sqrt(var))
            for _, samples, mean, var, _ in agg[series]
        ]
        label = f"{label_prefix}{series}" if label_prefix else series
        curves.append((label, pts))
    return curves


def curves_from_files(paths):
    """One curve per (file, series); labels prefixed by the file stem when
    several files are plotted together."""
    curves = []
    for path in paths:
        rows = read_rows(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        prefix = f"{stem}:" if len(paths) > 1 else ""
        curves.extend(curves_from_rows(rows, prefix))
    return curves


def render_plot(curves, title="", x_label="environment samples",
                y_label="greedy return"):
    if not any(pts for _, pts in curves):
        raise EmptyPlot("nothing to plot")
    xs = [x for _, pts in curves for x, _, _ in pts]
    lows = [m - s for _, pts in curves for _, m, s in pts]
    highs = [m + s for _, pts in curves for _, m, s in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(lows + [0.0]), max(highs + [1.0])
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x):
        return MARGIN_LEFT + plot_w * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return MARGIN_TOP + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}"'
        f' height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}"'
        f' height="{plot_h}" fill="none" stroke="#333" stroke-width="1"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = _fmt(px(t))
        parts.append(
            f'<line x1="{x}" y1="{py(y_lo):.2f}" x2="{x}"'
            f' y2="{py(y_lo) + 4:.2f}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{x}" y="{py(y_lo) + 16:.2f}" font-size="10"'
            f' text-anchor="middle" font-family="sans-serif">'
            f"{_tick_label(t)}</text>"
        )
    for t in _ticks(y_lo, y_hi):
        y = _fmt(py(t))
        parts.append(
            f'<line x1="{MARGIN_LEFT - 4}" y1="{y}" x2="{MARGIN_LEFT}"'
            f' y2="{y}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT - 7}" y="{y}" font-size="10"'
            f' text-anchor="end" dominant-baseline="middle"'
            f' font-family="sans-serif">{_tick_label(t)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.2f}" y="{HEIGHT - 10}"'
        f' font-size="12" text-anchor="middle" font-family="sans-serif">'
        f"{x_label}</text>"
    )
    parts.append(
        f'<text x="14" y="{MARGIN_TOP + plot_h / 2:.2f}" font-size="12"'
        f' text-anchor="middle" font-family="sans-serif"'
        f' transform="rotate(-90 14 {MARGIN_TOP + plot_h / 2:.2f})">'
        f"{y_label}</text>"
    )
    if title:
        parts.append(
            f'<text x="{WIDTH / 2:.2f}" y="14" font-size="13"'
            f' text-anchor="middle" font-family="sans-serif">{title}</text>'
        )

    for i, (label, pts) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        if not pts:
            continue
        upper = [(px(x), py(m + s)) for x, m, s in pts]
        lower = [(px(x), py(m - s)) for x, m, s in reversed(pts)]
        band = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in upper + lower)
        parts.append(
            f'<polygon points="{band}" fill="{color}" fill-opacity="0.15"'
            f' stroke="none"/>'
        )
        line = " ".join(f"{_fmt(px(x))},{_fmt(py(m))}" for x, m, _ in pts)
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}"'
            f' stroke-width="1.5"/>'
        )
        ly = MARGIN_TOP + 14 + 14 * i
        parts.append(
            f'<line x1="{MARGIN_LEFT + 8}" y1="{ly}" x2="{MARGIN_LEFT + 28}"'
            f' y2="{ly}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT + 33}" y="{ly + 3}" font-size="10"'
            f' font-family="sans-serif">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_files(paths, output, title=""):
    svg = render_plot(curves_from_files(paths), title=title)
    with open(output, "w", encoding="utf-8") as fh:
        fh.write(svg)
