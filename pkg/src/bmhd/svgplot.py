"""Minimal deterministic SVG line charts (no plotting dependencies).

Only what the experiment reports need: log-log decay curves with a reference
slope, and margin-vs-frequency sweeps with a zero line.  Output bytes depend
only on the input data.
"""

from __future__ import annotations

import math

_W, _H = 720, 480
_ML, _MR, _MT, _MB = 70, 20, 40, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _ticks(lo: float, hi: float, log: bool):
    if log:
        lo_e = math.floor(math.log10(lo))
        hi_e = math.ceil(math.log10(hi))
        return [10.0**e for e in range(lo_e, hi_e + 1) if lo <= 10.0**e <= hi]
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / 4 if span > 0 else 1.0))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= 6:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * max(1.0, abs(hi)):
        out.append(v)
        v += step
    return out


def _tick_label(v: float, log: bool) -> str:
    if log:
        e = round(math.log10(v))
        return f"1e{e}"
    return f"{v:.3g}"


def line_chart(series: dict, path, title: str = "", xlabel: str = "",
               ylabel: str = "", logx: bool = False, logy: bool = False,
               ref_line=None, hlines=(), annotations=()):
    """Write a line chart; `series` maps name -> (x list, y list).

    `ref_line = (slope, intercept, label)` draws y = intercept + slope * x in
    the transformed (possibly log) coordinates; `hlines` are horizontal
    guides at data-space y values.
    """
    if not series or all(len(x) == 0 for x, _ in series.values()):
        raise ValueError("nothing to plot: all series are empty")

    def tx(x):
        if logx:
            if x <= 0:
                raise ValueError(f"log x-axis needs positive values, got {x}")
            return math.log10(x)
        return x

    def ty(y):
        if logy:
            if y <= 0:
                raise ValueError(f"log y-axis needs positive values, got {y}")
            return math.log10(y)
        return y

    xs = [tx(x) for pts, _ in series.values() for x in pts]
    ys = [ty(y) for _, pts in series.values() for y in pts]
    for y in hlines:
        ys.append(ty(y) if logy else y)
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x):
        return _ML + (tx(x) - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return _MT + (y_hi - ty(y)) / (y_hi - y_lo) * ph

    def py_t(yt):
        return _MT + (y_hi - yt) / (y_hi - y_lo) * ph

    def px_t(xt):
        return _ML + (xt - x_lo) / (x_hi - x_lo) * pw

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        'stroke="black" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_W // 2}" y="24" text-anchor="middle" '
            f'font-family="monospace" font-size="15">{title}</text>'
        )
    for v in _ticks(10.0**x_lo if logx else x_lo, 10.0**x_hi if logx else x_hi, logx):
        x = px(v)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_MT + ph}" x2="{_fmt(x)}" '
            f'y2="{_MT + ph + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_MT + ph + 20}" text-anchor="middle" '
            f'font-family="monospace" font-size="11">{_tick_label(v, logx)}</text>'
        )
    for v in _ticks(10.0**y_lo if logy else y_lo, 10.0**y_hi if logy else y_hi, logy):
        yt = math.log10(v) if logy else v
        if not y_lo <= yt <= y_hi:
            continue
        y = py_t(yt)
        parts.append(
            f'<line x1="{_ML - 5}" y1="{_fmt(y)}" x2="{_ML}" y2="{_fmt(y)}" '
            'stroke="black"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
            f'font-family="monospace" font-size="11">{_tick_label(v, logy)}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{_ML + pw // 2}" y="{_H - 12}" text-anchor="middle" '
            f'font-family="monospace" font-size="13">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="18" y="{_MT + ph // 2}" text-anchor="middle" '
            f'font-family="monospace" font-size="13" '
            f'transform="rotate(-90 18 {_MT + ph // 2})">{ylabel}</text>'
        )
    for y in hlines:
        yy = py(y)
        parts.append(
            f'<line x1="{_ML}" y1="{_fmt(yy)}" x2="{_ML + pw}" y2="{_fmt(yy)}" '
            'stroke="#888888" stroke-dasharray="6,3"/>'
        )
    if ref_line is not None:
        slope, intercept, label = ref_line
        y1t, y2t = intercept + slope * x_lo, intercept + slope * x_hi
        parts.append(
            f'<line x1="{_fmt(px_t(x_lo))}" y1="{_fmt(py_t(y1t))}" '
            f'x2="{_fmt(px_t(x_hi))}" y2="{_fmt(py_t(y2t))}" '
            'stroke="#444444" stroke-dasharray="3,4" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_ML + pw - 6}" y="{_MT + 16}" text-anchor="end" '
            f'font-family="monospace" font-size="12" fill="#444444">{label}</text>'
        )
    for i, (name, (xv, yv)) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xv, yv))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            'stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_ML + 8}" y="{_MT + 16 + 15 * i}" font-family="monospace" '
            f'font-size="12" fill="{color}">{name}</text>'
        )
    for i, text in enumerate(annotations):
        parts.append(
            f'<text x="{_ML + 8}" y="{_MT + ph - 10 - 15 * i}" '
            f'font-family="monospace" font-size="12">{text}</text>'
        )
    parts.append("</svg>")
    data = "\n".join(parts) + "\n"
    with open(path, "w") as fh:
        fh.write(data)
    return path
