"""Self-contained SVG line charts written as plain text."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 800, 500
LEFT, RIGHT, TOP, BOTTOM = 80, 30, 40, 70
COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")


@dataclass(frozen=True)
class Series:
    label: str
    points: tuple[tuple[float, float], ...]
    band: tuple[tuple[float, float, float], ...] = field(default=())  # (x, lo, hi)


def _num(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / k
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    out, t = [], first
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def render_svg_curve(series, x_label: str, y_label: str, title: str = "",
                     metadata: str = "") -> str:
    series = [s if isinstance(s, Series) else Series(**s) for s in series]
    if not series:
        raise ValueError("write_svg_curve needs at least one series")
    for s in series:
        if not s.points:
            raise ValueError(f"series {s.label!r} has no points")
        xs = [p[0] for p in s.points]
        if xs != sorted(xs):
            raise ValueError(f"series {s.label!r} points are not sorted by x")
    xs = [p[0] for s in series for p in s.points]
    ys = [p[1] for s in series for p in s.points]
    ys += [v for s in series for b in s.band for v in b[1:]]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
           f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">']
    if metadata:
        out.append(f"<metadata>{escape(metadata)}</metadata>")
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(x0, x1):
        X = _num(px(t))
        out.append(f'<line x1="{X}" y1="{TOP + ph}" x2="{X}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{TOP + ph + 20}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        Y = _num(py(t))
        out.append(f'<line x1="{LEFT - 5}" y1="{Y}" x2="{LEFT}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">{t:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 20}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="20" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 20 {TOP + ph / 2:.2f})">{escape(y_label)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')
    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        if s.band:
            upper = [f"{_num(px(x))},{_num(py(hi))}" for x, lo, hi in s.band]
            lower = [f"{_num(px(x))},{_num(py(lo))}" for x, lo, hi in reversed(s.band)]
            out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                       f'fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in s.points)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = TOP + 18 + 18 * i
        out.append(f'<line x1="{LEFT + 12}" y1="{ly}" x2="{LEFT + 36}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + 42}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg_curve(series, x_label: str, y_label: str, path, title: str = "",
                    metadata: str = "") -> None:
    """Render ``series`` (each a ``Series`` or a dict with label, points and
    optional band) and write the SVG to ``path``."""
    text = render_svg_curve(series, x_label, y_label, title, metadata)
    Path(path).write_text(text, encoding="utf-8")


def curve_series(agg_rows) -> list[Series]:
    """ERM and wERM series with +-1 std bands from aggregate rows (dicts
    with alpha, mean_erm, std_erm, mean_werm, std_werm); absent cells are
    skipped."""
    out = []
    for name, key in (("ERM", "erm"), ("wERM", "werm")):
        rows = [r for r in agg_rows if r[f"mean_{key}"] is not None]
        pts = tuple((r["alpha"], r[f"mean_{key}"]) for r in rows)
        band = tuple((r["alpha"], r[f"mean_{key}"] - (r[f"std_{key}"] or 0.0),
                      r[f"mean_{key}"] + (r[f"std_{key}"] or 0.0)) for r in rows)
        if pts:
            out.append(Series(name, pts, band))
    return out
