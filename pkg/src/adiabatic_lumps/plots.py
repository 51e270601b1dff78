"""Static figure output: standalone SVG line charts and gnuplot data/script pairs."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["svg_line_chart", "write_gnuplot"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]
    span = hi - lo or 1.0
    step = 10 ** math.floor(math.log10(span / 4))
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


def svg_line_chart(path, series: dict[str, tuple], title: str = "", xlabel: str = "",
                   ylabel: str = "", logx: bool = False, logy: bool = False,
                   width: int = 640, height: int = 420) -> None:
    """Write ``series`` (label -> (x, y)) as a line chart with markers."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 40, 50
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = {}
    for label, (x, y) in series.items():
        keep = [(tx(a), ty(b)) for a, b in zip(x, y)
                if np.isfinite(a) and np.isfinite(b) and (a > 0 or not logx) and (b > 0 or not logy)]
        pts[label] = keep
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(v):
        return pad_l + (v - x0) / (x1 - x0) * W

    def sy(v):
        return pad_t + H - (v - y0) / (y1 - y0) * H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{H}" fill="none" stroke="black"/>',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{pad_l + W / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="16" y="{pad_t + H / 2}" text-anchor="middle" '
           f'transform="rotate(-90 16 {pad_t + H / 2})">{escape(ylabel)}</text>']
    for t in _ticks(x0, x1, logx):
        v = math.log10(t) if logx else t
        if x0 - 1e-9 <= v <= x1 + 1e-9:
            out.append(f'<line x1="{sx(v):.1f}" y1="{pad_t + H}" x2="{sx(v):.1f}" y2="{pad_t + H + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(v):.1f}" y="{pad_t + H + 18}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1, logy):
        v = math.log10(t) if logy else t
        if y0 - 1e-9 <= v <= y1 + 1e-9:
            out.append(f'<line x1="{pad_l - 5}" y1="{sy(v):.1f}" x2="{pad_l}" y2="{sy(v):.1f}" stroke="black"/>')
            out.append(f'<text x="{pad_l - 8}" y="{sy(v) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for i, (label, p) in enumerate(pts.items()):
        color = _COLORS[i % len(_COLORS)]
        if p:
            d = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in p)
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            if len(p) <= 60:
                out.extend(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3" fill="{color}"/>' for a, b in p)
        ly = pad_t + 16 + 16 * i
        out.append(f'<line x1="{pad_l + 10}" y1="{ly - 4}" x2="{pad_l + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + 36}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def write_gnuplot(stem, columns: dict[str, np.ndarray], x: str, ys: list[str],
                  title: str = "", logx: bool = False, logy: bool = False) -> None:
    """Write ``<stem>.dat`` (whitespace separated, ``#`` header) and ``<stem>.gp``."""
    stem = Path(stem)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with open(stem.with_suffix(".dat"), "w") as fh:
        fh.write("# " + " ".join(names) + "\n")
        for row in data:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    xi = names.index(x) + 1
    lines = [f'set title "{title}"', f'set xlabel "{x}"']
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
    lines.append("set key left top")
    plots = [f'"{stem.with_suffix(".dat").name}" using {xi}:{names.index(y) + 1} with linespoints title "{y}"'
             for y in ys]
    lines.append("plot " + ", \\\n     ".join(plots))
    stem.with_suffix(".gp").write_text("\n".join(lines) + "\n")
