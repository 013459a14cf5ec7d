"""Minimal deterministic SVG line plots from CSV columns."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ValidationError

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def read_columns(csv_path, x_column: str, y_column: str, series_column: str | None = None):
    """Numeric ``(x, y)`` pairs per series; rows with a blank or non-numeric cell are skipped."""
    with open(csv_path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    fields = reader.fieldnames or []
    for col in (x_column, y_column, series_column):
        if col is not None and col not in fields:
            raise ValidationError(f"unknown column {col!r}; available: {', '.join(fields)}")
    series: dict[str, list] = {}
    for row in reader:
        try:
            x, y = float(row[x_column]), float(row[y_column])
        except (TypeError, ValueError):
            continue
        if not (math.isfinite(x) and math.isfinite(y)):
            continue
        key = row[series_column] if series_column else y_column
        series.setdefault(key, []).append((x, y))
    return series


def _ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    out, t = [], first
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return out


def _fmt(v: float) -> str:
    return format(v, ".4g")


def render_svg(series: dict, x_label: str, y_label: str, title: str = "") -> str:
    pts = [p for s in series.values() for p in s]
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle">{escape(title)}</text>')
    x0, y0 = MARGIN_L, MARGIN_T + ph
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="black"/>')
    out.append(f'<text x="{x0 + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="16" y="{MARGIN_T + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.2f})">{escape(y_label)}</text>'
    )
    if not pts:
        out.append(f'<text x="{x0 + pw / 2:.2f}" y="{MARGIN_T + ph / 2:.2f}" text-anchor="middle" fill="gray">no data</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    xlo, xhi, ylo, yhi = min(xs), max(xs), min(ys), max(ys)
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5

    def sx(x):
        return x0 + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        return y0 - (y - ylo) / (yhi - ylo) * ph

    for t in _ticks(xlo, xhi):
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{y0 + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        py = sy(t)
        out.append(f'<line x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{py + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    for i, name in enumerate(sorted(series)):
        data = sorted(series[name])
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in data)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                   f"<title>{escape(name)}</title></polyline>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(csv_path, x_column: str, y_column: str, out_path, series_column: str | None = None,
              title: str = "") -> Path:
    series = read_columns(csv_path, x_column, y_column, series_column)
    out = Path(out_path)
    out.write_text(render_svg(series, x_column, y_column, title))
    return out
