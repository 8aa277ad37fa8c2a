"""Minimal SVG line charts from metrics CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH = 640
HEIGHT = 400
MARGIN = (60, 20, 20, 50)  # left, right, top, bottom
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def read_series(path, x: str, ys: list[str], group: str | None = None) -> dict[str, list[tuple[float, float]]]:
    """Read ``(x, y)`` pairs per series; ``group`` splits rows by a column value."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        missing = [c for c in [x, *ys] + ([group] if group else []) if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        series: dict[str, list[tuple[float, float]]] = {}
        for lineno, row in enumerate(reader, 2):
            for y in ys:
                name = y if group is None else f"{row[group]}:{y}"
                try:
                    pt = (float(row[x]), float(row[y]))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed number") from exc
                series.setdefault(name, []).append(pt)
    return series


class _Scale:
    def __init__(self, lo: float, hi: float, a: float, b: float, log: bool = False):
        self.log = log
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        self.lo, self.hi, self.a, self.b = lo, hi, a, b

    def __call__(self, v: float) -> float:
        if self.log:
            v = math.log10(v)
        return self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)

    def inverse(self, p: float) -> float:
        v = self.lo + (p - self.a) / (self.b - self.a) * (self.hi - self.lo)
        return 10 ** v if self.log else v


def render_svg(series: dict[str, list[tuple[float, float]]], xlabel: str = "x",
               ylabel: str = "y", title: str = "", logy: bool = False) -> str:
    """One polyline per series, points kept in their given order.

    The axis ranges are written into the root element as ``data-xrange`` and
    ``data-yrange`` so coordinates can be mapped back to data values.
    """
    left, right, top, bottom = MARGIN
    pts = [p for s in series.values() for p in s if not (logy and p[1] <= 0)]
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        xlo, xhi, ylo, yhi = min(xs), max(xs), min(ys), max(ys)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, (1e-3 if logy else 0.0), 1.0
    sx = _Scale(xlo, xhi, left, WIDTH - right)
    sy = _Scale(ylo, yhi, HEIGHT - bottom, top, logy)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xrange="{xlo!r} {xhi!r}" '
        f'data-yrange="{ylo!r} {yhi!r}" data-logy="{int(logy)}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{left}" y1="{HEIGHT - bottom}" x2="{WIDTH - right}" y2="{HEIGHT - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{HEIGHT - bottom}" stroke="black"/>',
        f'<text x="{(left + WIDTH - right) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{(top + HEIGHT - bottom) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(top + HEIGHT - bottom) / 2})">{escape(ylabel)}</text>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="14" text-anchor="middle">{escape(title)}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s if not (logy and y <= 0))
        out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{WIDTH - right - 150}" y="{top + 16 * (i + 1)}" fill="{color}">'
                   f'{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(csv_path, svg_path=None, x: str = "time_step",
              ys: tuple[str, ...] = ("pre_ecc_ser",), group: str | None = None,
              logy: bool = False, title: str = "") -> Path:
    series = read_series(csv_path, x, list(ys), group)
    svg_path = Path(svg_path) if svg_path else Path(csv_path).with_suffix(".svg")
    svg_path.write_text(render_svg(series, x, ", ".join(ys), title, logy))
    return svg_path
