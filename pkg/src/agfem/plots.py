"""Minimal self-contained SVG emitters: log-log lines and grid heatmaps.

Hand-rolled so plot output stays deterministic and dependency-free.
"""
from __future__ import annotations

import math

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 70, 20, 20, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.6g}"


def _log_ticks(lo: float, hi: float):
    e0 = math.floor(math.log10(lo))
    e1 = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(int(e0), int(e1) + 1)]


def loglog_plot(path, series, xlabel: str, ylabel: str, title: str = "",
                slope_note: str = "") -> None:
    """series: list of (label, xs, ys); positive data only."""
    xs_all = [x for _, xs, _ in series for x in xs if x > 0]
    ys_all = [y for _, _, ys in series for y in ys if y > 0]
    if not xs_all or not ys_all:
        xs_all, ys_all = [1.0, 10.0], [1.0, 10.0]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if x0 == x1:
        x0, x1 = x0 / 2, x1 * 2
    if y0 == y1:
        y0, y1 = y0 / 2, y1 * 2

    def px(x):
        return _ML + (math.log10(x) - math.log10(x0)) / \
            (math.log10(x1) - math.log10(x0)) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (math.log10(y) - math.log10(y0)) / \
            (math.log10(y1) - math.log10(y0)) * (_H - _MT - _MB)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<rect x="{_ML}" y="{_MT}" width="{_W-_ML-_MR}" '
             f'height="{_H-_MT-_MB}" fill="none" stroke="black"/>']
    for t in _log_ticks(x0, x1):
        if x0 <= t <= x1:
            parts.append(f'<line x1="{_f(px(t))}" y1="{_H-_MB}" x2="{_f(px(t))}" '
                         f'y2="{_H-_MB+5}" stroke="black"/>')
            parts.append(f'<text x="{_f(px(t))}" y="{_H-_MB+18}" font-size="11" '
                         f'text-anchor="middle">1e{int(math.log10(t))}</text>')
    for t in _log_ticks(y0, y1):
        if y0 <= t <= y1:
            parts.append(f'<line x1="{_ML-5}" y1="{_f(py(t))}" x2="{_ML}" '
                         f'y2="{_f(py(t))}" stroke="black"/>')
            parts.append(f'<text x="{_ML-8}" y="{_f(py(t)+4)}" font-size="11" '
                         f'text-anchor="end">1e{int(math.log10(t))}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{_f(px(x))},{_f(py(y))}"
                       for x, y in zip(xs, ys) if x > 0 and y > 0)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            if x > 0 and y > 0:
                parts.append(f'<circle cx="{_f(px(x))}" cy="{_f(py(y))}" r="3" '
                             f'fill="{color}"/>')
        parts.append(f'<text x="{_W-_MR-5}" y="{_MT+15+14*k}" font-size="12" '
                     f'text-anchor="end" fill="{color}">{label}</text>')
    parts.append(f'<text x="{(_ML+_W-_MR)//2}" y="{_H-12}" font-size="13" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{(_MT+_H-_MB)//2}" font-size="13" '
                 f'text-anchor="middle" transform="rotate(-90 16 '
                 f'{(_MT+_H-_MB)//2})">{ylabel}</text>')
    if title:
        parts.append(f'<text x="{_W//2}" y="14" font-size="13" '
                     f'text-anchor="middle">{title}</text>')
    if slope_note:
        parts.append(f'<text x="{_ML+8}" y="{_MT+15}" font-size="12">'
                     f'{slope_note}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def _heat_color(t: float) -> str:
    """Blue -> white -> red ramp on [0, 1]."""
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        s = t / 0.5
        r, g, b = int(30 + s * 225), int(60 + s * 195), 255
    else:
        s = (t - 0.5) / 0.5
        r, g, b = 255, int(255 - s * 195), int(255 - s * 225)
    return f"rgb({r},{g},{b})"


def heatmap(path, values, row_labels, col_labels, title: str = "",
            log_color: bool = True) -> None:
    """values[i][j] drawn as one rectangle per grid point; None = failed."""
    nr = len(values)
    nc = len(values[0]) if nr else 0
    flat = [v for row in values for v in row if v is not None and v > 0]
    if not flat:
        flat = [1.0]
    vmin, vmax = min(flat), max(flat)
    if log_color:
        lo, hi = math.log10(vmin), math.log10(vmax)
    else:
        lo, hi = vmin, vmax
    if hi <= lo:
        hi = lo + 1.0
    cw = (_W - _ML - _MR) / max(nc, 1)
    ch = (_H - _MT - _MB - 20) / max(nr, 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>']
    for i in range(nr):
        for j in range(nc):
            v = values[i][j]
            if v is None or v <= 0:
                fill = "#999999"
            else:
                t = ((math.log10(v) if log_color else v) - lo) / (hi - lo)
                fill = _heat_color(t)
            x = _ML + j * cw
            y = _MT + 20 + i * ch
            parts.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" '
                         f'height="{_f(ch)}" fill="{fill}" stroke="#444" '
                         f'stroke-width="0.3"/>')
    for j, lab in enumerate(col_labels):
        parts.append(f'<text x="{_f(_ML+(j+0.5)*cw)}" y="{_H-_MB+16}" '
                     f'font-size="10" text-anchor="middle">{lab}</text>')
    for i, lab in enumerate(row_labels):
        parts.append(f'<text x="{_ML-6}" y="{_f(_MT+20+(i+0.5)*ch+3)}" '
                     f'font-size="10" text-anchor="end">{lab}</text>')
    if title:
        parts.append(f'<text x="{_W//2}" y="14" font-size="13" '
                     f'text-anchor="middle">{title}</text>')
    parts.append(f'<text x="{_ML}" y="{_MT+12}" font-size="11">'
                 f'min {_f(vmin)}   max {_f(vmax)}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
