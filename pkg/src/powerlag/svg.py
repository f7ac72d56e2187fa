"""Self-contained SVG power-curve charts.

Output depends only on the inputs (fixed number formatting, no timestamps
or random ids), so identical data give byte-identical files.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence
from xml.sax.saxutils import escape

__all__ = ["power_curve_svg"]

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=64, right=24, top=40, bottom=56)
COLORS = ("#1f4e9c", "#c0392b", "#2e7d32", "#6a1b9a", "#ef6c00")


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    """Round tick values covering ``[lo, hi]``."""
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:g}"


def power_curve_svg(
    n_grid: Sequence[float],
    curves: Sequence[Sequence[float]],
    labels: Sequence[str],
    points: Optional[Sequence[Optional[Sequence[float]]]] = None,
    intervals: Optional[Sequence[Optional[Sequence[tuple]]]] = None,
    title: str = "Power curve",
    target_power: Optional[float] = None,
) -> str:
    """Dashed calculated curves with optional empirical point markers.

    Parameters
    ----------
    n_grid : sequence of float
        Sample sizes (x axis).
    curves : sequence of sequences
        Calculated power per series, each aligned with ``n_grid``.
    labels : sequence of str
        Legend entry per series.
    points, intervals : optional
        Empirical power per series and its ``(low, high)`` bounds; ``None``
        entries skip a series.
    target_power : float, optional
        Draws a faint horizontal reference line.
    """
    n = [float(x) for x in n_grid]
    if not n:
        raise ValueError("n_grid is empty")
    if len(curves) != len(labels):
        raise ValueError("one label per curve is required")
    x0, x1 = min(n), max(n)
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    L, R, T, B = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def sx(v):
        return L + (v - x0) / (x1 - x0) * pw

    def sy(p):
        return T + (1.0 - p) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    # axes and grid
    for p in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        y = _num(sy(p))
        out.append(f'<line x1="{L}" y1="{y}" x2="{L + pw}" y2="{y}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{L - 8}" y="{y}" text-anchor="end" dy="4">{_label(p)}</text>')
    for v in _ticks(x0, x1):
        x = _num(sx(v))
        out.append(f'<line x1="{x}" y1="{T + ph}" x2="{x}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{T + ph + 18}" text-anchor="middle">{_label(v)}</text>')
    out.append(
        f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    out.append(
        f'<text x="{L + pw / 2:.2f}" y="{HEIGHT - 14}" text-anchor="middle">'
        "number of cases (matched sets)</text>"
    )
    out.append(
        f'<text x="16" y="{T + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {T + ph / 2:.2f})">power</text>'
    )
    if target_power is not None:
        y = _num(sy(target_power))
        out.append(
            f'<line x1="{L}" y1="{y}" x2="{L + pw}" y2="{y}" stroke="#9e9e9e" stroke-dasharray="2 3"/>'
        )

    for k, (curve, label) in enumerate(zip(curves, labels)):
        color = COLORS[k % len(COLORS)]
        if len(curve) != len(n):
            raise ValueError("curve length does not match n_grid")
        path = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(n, curve))
        out.append(
            f'<polyline points="{path}" fill="none" stroke="{color}" '
            'stroke-width="2" stroke-dasharray="6 4"/>'
        )
        pts = points[k] if points is not None and k < len(points) else None
        ivs = intervals[k] if intervals is not None and k < len(intervals) else None
        if pts is not None:
            for i, (a, b) in enumerate(zip(n, pts)):
                if b is None or not math.isfinite(b):
                    continue
                if ivs is not None and ivs[i] is not None:
                    lo, hi = ivs[i]
                    out.append(
                        f'<line x1="{_num(sx(a))}" y1="{_num(sy(lo))}" x2="{_num(sx(a))}" '
                        f'y2="{_num(sy(hi))}" stroke="{color}"/>'
                    )
                out.append(
                    f'<circle cx="{_num(sx(a))}" cy="{_num(sy(b))}" r="3.5" fill="{color}"/>'
                )
        ly = T + 16 + 18 * k
        out.append(
            f'<line x1="{L + 12}" y1="{ly}" x2="{L + 40}" y2="{ly}" stroke="{color}" '
            'stroke-width="2" stroke-dasharray="6 4"/>'
        )
        out.append(f'<text x="{L + 46}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
