"""A tiny deterministic SVG line-plot writer.

Produces self-contained vector output with no plotting dependency, so
identical inputs yield byte-identical files on every platform.
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

__all__ = ["line_plot"]

_PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

_MARGIN_LEFT = 64.0
_MARGIN_RIGHT = 16.0
_MARGIN_TOP = 30.0
_MARGIN_BOTTOM = 46.0


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def line_plot(
    series: Sequence[tuple[str, Sequence[tuple[float, float]]]],
    x_label: str,
    y_label: str,
    title: str = "",
    log_x: bool = True,
    width: int = 720,
    height: int = 480,
) -> str:
    """Render labeled (x, y) series as an SVG document string.

    With ``log_x`` the x axis is log-scaled with decade ticks; non-positive
    x values are clamped to the smallest positive x in the data (or 1).
    The y axis always spans at least [0, 1].
    """
    if not series:
        raise ValueError("line_plot requires at least one series")
    points = [(x, y) for _, pts in series for x, y in pts]
    if not points:
        raise ValueError("line_plot requires at least one point")

    positive = [x for x, _ in points if x > 0]
    floor_x = min(positive) if positive else 1.0

    def tx(x: float) -> float:
        return math.log10(max(x, floor_x)) if log_x else x

    xs = [tx(x) for x, _ in points]
    ys = [y for _, y in points]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    y_lo, y_hi = min(0.0, min(ys)), max(1.0, max(ys))

    plot_w = width - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = height - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(x: float) -> float:
        return _MARGIN_LEFT + (tx(x) - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h

    out: list[str] = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">'
    )
    out.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    if title:
        out.append(
            f'<text x="{_fmt(width / 2)}" y="18" text-anchor="middle" font-size="14">'
            f"{escape(title)}</text>"
        )

    axis_y = _MARGIN_TOP + plot_h
    out.append(
        f'<line x1="{_fmt(_MARGIN_LEFT)}" y1="{_fmt(axis_y)}" x2="{_fmt(_MARGIN_LEFT + plot_w)}" '
        f'y2="{_fmt(axis_y)}" stroke="#000000"/>'
    )
    out.append(
        f'<line x1="{_fmt(_MARGIN_LEFT)}" y1="{_fmt(_MARGIN_TOP)}" x2="{_fmt(_MARGIN_LEFT)}" '
        f'y2="{_fmt(axis_y)}" stroke="#000000"/>'
    )

    # X ticks: decades when log-scaled, five even splits otherwise.
    if log_x:
        tick_values = [
            10.0**k for k in range(math.floor(x_lo), math.ceil(x_hi) + 1) if x_lo <= k <= x_hi
        ]
        if not tick_values:
            tick_values = [10.0 ** ((x_lo + x_hi) / 2)]
    else:
        tick_values = [x_lo + (x_hi - x_lo) * i / 4 for i in range(5)]
    for value in tick_values:
        x = px(value) if log_x else _MARGIN_LEFT + (value - x_lo) / (x_hi - x_lo) * plot_w
        label = f"{value:g}"
        out.append(
            f'<line x1="{_fmt(x)}" y1="{_fmt(axis_y)}" x2="{_fmt(x)}" y2="{_fmt(axis_y + 4)}" '
            f'stroke="#000000"/>'
        )
        out.append(
            f'<text x="{_fmt(x)}" y="{_fmt(axis_y + 17)}" text-anchor="middle">{escape(label)}</text>'
        )

    for i in range(5):
        value = y_lo + (y_hi - y_lo) * i / 4
        y = py(value)
        out.append(
            f'<line x1="{_fmt(_MARGIN_LEFT - 4)}" y1="{_fmt(y)}" x2="{_fmt(_MARGIN_LEFT)}" '
            f'y2="{_fmt(y)}" stroke="#000000"/>'
        )
        out.append(
            f'<text x="{_fmt(_MARGIN_LEFT - 8)}" y="{_fmt(y + 4)}" text-anchor="end">'
            f"{value:.2f}</text>"
        )

    out.append(
        f'<text x="{_fmt(_MARGIN_LEFT + plot_w / 2)}" y="{_fmt(height - 8)}" '
        f'text-anchor="middle">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="16" y="{_fmt(_MARGIN_TOP + plot_h / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_fmt(_MARGIN_TOP + plot_h / 2)})">{escape(y_label)}</text>'
    )

    for index, (label, pts) in enumerate(series):
        color = _PALETTE[index % len(_PALETTE)]
        coords = [(px(x), py(y)) for x, y in pts]
        if len(coords) > 1:
            path = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in coords)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in coords:
            out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="3.5" fill="{color}"/>')
        legend_y = _MARGIN_TOP + 8 + 16 * index
        legend_x = _MARGIN_LEFT + plot_w - 150
        out.append(
            f'<rect x="{_fmt(legend_x)}" y="{_fmt(legend_y - 8)}" width="12" height="12" '
            f'fill="{color}"/>'
        )
        out.append(
            f'<text x="{_fmt(legend_x + 18)}" y="{_fmt(legend_y + 2)}">{escape(label)}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"
