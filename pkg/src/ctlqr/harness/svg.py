"""Minimal standalone SVG line plots. Output is a pure function of the input."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence, Tuple

from ..exceptions import InvalidArgumentError

Series = Tuple[str, Sequence[float], Sequence[float]]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 150, 30, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.4g}"


def _linear_ticks(lo: float, hi: float, n: int = 5):
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        ticks.append(round(first + k * step, 12))
        k += 1
    return ticks


def _log_ticks(lo: float, hi: float):
    return [10.0**e for e in range(math.ceil(math.log10(lo) - 1e-12), math.floor(math.log10(hi) + 1e-12) + 1)]


def render_svg_lineplot(
    series: Sequence[Series],
    xlabel: str = "",
    ylabel: str = "",
    path=None,
    logx: bool = False,
    logy: bool = False,
    title: Optional[str] = None,
) -> str:
    """Render ``(label, xs, ys)`` series as one SVG line plot.

    Non-finite points are dropped. With ``logx``/``logy`` the axis is
    logarithmic and ticks sit at powers of ten inside the data range.
    Writes to ``path`` when given and returns the SVG text.
    """
    if not series:
        raise InvalidArgumentError("at least one series is required")
    clean = []
    for label, xs, ys in series:
        if len(xs) != len(ys):
            raise InvalidArgumentError(f"series {label!r}: x and y lengths differ")
        pts = [
            (float(x), float(y))
            for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)
        ]
        if len(pts) < 2:
            raise InvalidArgumentError(f"series {label!r} needs at least two plottable points")
        clean.append((str(label), pts))

    fx = math.log10 if logx else (lambda v: v)
    fy = math.log10 if logy else (lambda v: v)
    xs = [fx(x) for _, pts in clean for x, _ in pts]
    ys = [fy(y) for _, pts in clean for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (fx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return _MT + ph - (fy(v) - y0) / (y1 - y0) * ph

    def esc(s: str) -> str:
        return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    xt = _log_ticks(10**x0, 10**x1) if logx else _linear_ticks(x0, x1)
    yt = _log_ticks(10**y0, 10**y1) if logy else _linear_ticks(y0, y1)
    for v in xt:
        X = px(v)
        out.append(f'<line class="xtick" x1="{_num(X)}" y1="{_MT + ph}" x2="{_num(X)}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(X)}" y="{_MT + ph + 18}" font-size="11" text-anchor="middle">{_label(v)}</text>')
    for v in yt:
        Y = py(v)
        out.append(f'<line class="ytick" x1="{_ML - 5}" y1="{_num(Y)}" x2="{_ML}" y2="{_num(Y)}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{_num(Y + 4)}" font-size="11" text-anchor="end">{_label(v)}</text>')
    for i, (label, pts) in enumerate(clean):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = _MT + 10 + 18 * i
        lx = _ML + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{esc(label)}</text>')
    out.append(f'<text x="{_ML + pw / 2:.2f}" y="{_H - 10}" font-size="12" text-anchor="middle">{esc(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{_MT + ph / 2:.2f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + ph / 2:.2f})">{esc(ylabel)}</text>'
    )
    if title:
        out.append(f'<text x="{_ML + pw / 2:.2f}" y="20" font-size="13" text-anchor="middle">{esc(title)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
