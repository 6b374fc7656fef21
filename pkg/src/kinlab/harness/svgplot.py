"""Static SVG line charts written without a plotting library, each with its source CSV."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..arrayio import atomic_write_text

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=72, right=150, top=36, bottom=56)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        if b - a < 1:
            b = a + 1
        step = max(1, (b - a) // 6)
        return [float(k) for k in range(a, b + 1, step)]
    span = hi - lo if hi > lo else 1.0
    raw = span / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _label(val, log):
    if log:
        return f"1e{int(round(val))}"
    return f"{val:.3g}"


def line_plot(series: dict, path, *, xlabel: str, ylabel: str, title: str = "", logx: bool = False,
              logy: bool = False, errors: dict | None = None) -> tuple:
    """Write ``path`` (.svg) and the same stem with .csv; returns both paths.

    ``series`` maps a legend label to (x, y) arrays; ``errors`` optionally
    maps labels to symmetric y error bars. Nonpositive values are dropped on
    log axes.
    """
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    rows = [f"series,{xlabel},{ylabel},error"]
    for name, (x, y) in series.items():
        err = (errors or {}).get(name)
        for k, (a, b) in enumerate(zip(x, y)):
            e = "" if err is None else repr(float(err[k]))
            rows.append(f"{name},{float(a)!r},{float(b)!r},{e}")
    atomic_write_text(csv_path, "\n".join(rows) + "\n")

    tx = (lambda a: np.log10(a)) if logx else (lambda a: a)
    ty = (lambda a: np.log10(a)) if logy else (lambda a: a)
    pts = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y) & ((x > 0) if logx else True) & ((y > 0) if logy else True)
        pts[name] = (tx(x[keep]), ty(y[keep]))
    allx = np.concatenate([p[0] for p in pts.values()] + [np.zeros(0)])
    ally = np.concatenate([p[1] for p in pts.values()] + [np.zeros(0)])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    sx = lambda a: MARGIN["left"] + (a - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda a: MARGIN["top"] + (y1 - a) / (y1 - y0) * ph  # noqa: E731

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="black"/>']
    for v in _ticks(x0, x1, logx):
        if x0 <= v <= x1:
            X = sx(v)
            out.append(f'<line x1="{X:.1f}" y1="{MARGIN["top"] + ph}" x2="{X:.1f}" '
                       f'y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{X:.1f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">'
                       f'{_label(v, logx)}</text>')
    for v in _ticks(y0, y1, logy):
        if y0 <= v <= y1:
            Y = sy(v)
            out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{Y:.1f}" x2="{MARGIN["left"]}" '
                       f'y2="{Y:.1f}" stroke="black"/>')
            out.append(f'<text x="{MARGIN["left"] - 8}" y="{Y + 4:.1f}" text-anchor="end">'
                       f'{_label(v, logy)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 14}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for k, (name, (x, y)) in enumerate(pts.items()):
        color = PALETTE[k % len(PALETTE)]
        if len(x):
            poly = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y))
            out.append(f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="1.8"/>')
            for a, b in zip(x, y):
                out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3" fill="{color}"/>')
        err = (errors or {}).get(name)
        if err is not None and not logy:
            rx, ry = series[name]
            for a, b, e in zip(rx, ry, err):
                xa = tx(float(a))
                out.append(f'<line x1="{sx(xa):.1f}" y1="{sy(b - e):.1f}" x2="{sx(xa):.1f}" '
                           f'y2="{sy(b + e):.1f}" stroke="{color}"/>')
        ly = MARGIN["top"] + 14 + 18 * k
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}">{escape(str(name))}</text>')
    out.append("</svg>")
    atomic_write_text(path, "\n".join(out) + "\n")
    return path, csv_path
