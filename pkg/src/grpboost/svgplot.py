"""Minimal deterministic SVG charts.

Every document embeds its numbers as a CSV table inside a
``<metadata>`` element, so a plot file is also a data file. Output
depends only on the inputs: fixed canvas, fixed formatting, no
timestamps.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .data import _atomic_write
from .errors import ConfigError

_W, _H = 800, 500
_ML, _MR, _MT, _MB = 70, 20, 40, 55
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f"]


def _f(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.6g}"


def _nice_ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("axis limits must be finite")
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / max(n - 1, 1)))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if span / (step * mult) <= n - 1:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * span:
        ticks.append(round(v, 10))
        v += step
    return ticks


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.xlim, self.ylim = xlim, ylim
        self.parts: list[str] = []
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
            f'height="{_H}" viewBox="0 0 {_W} {_H}" font-family="sans-serif">')
        self.parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
        self.parts.append(
            f'<text x="{_W // 2}" y="24" text-anchor="middle" '
            f'font-size="16">{escape(title)}</text>')
        self.parts.append(
            f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" '
            f'font-size="13">{escape(xlabel)}</text>')
        self.parts.append(
            f'<text x="16" y="{_H // 2}" text-anchor="middle" '
            f'font-size="13" transform="rotate(-90 16 {_H // 2})">'
            f'{escape(ylabel)}</text>')
        self._axes()

    def px(self, x: float) -> float:
        lo, hi = self.xlim
        return _ML + (x - lo) / (hi - lo) * (_W - _ML - _MR)

    def py(self, y: float) -> float:
        lo, hi = self.ylim
        return _H - _MB - (y - lo) / (hi - lo) * (_H - _MT - _MB)

    def _axes(self):
        x0, x1 = _ML, _W - _MR
        y0, y1 = _H - _MB, _MT
        self.parts.append(
            f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" '
            f'height="{y0 - y1}" fill="none" stroke="#333"/>')
        for t in _nice_ticks(*self.xlim):
            if self.xlim[0] <= t <= self.xlim[1]:
                px = self.px(t)
                self.parts.append(
                    f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" '
                    f'y2="{y0 + 5}" stroke="#333"/>')
                self.parts.append(
                    f'<text x="{px:.2f}" y="{y0 + 18}" text-anchor="middle" '
                    f'font-size="11">{_f(t)}</text>')
        for t in _nice_ticks(*self.ylim):
            if self.ylim[0] <= t <= self.ylim[1]:
                py = self.py(t)
                self.parts.append(
                    f'<line x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" '
                    f'y2="{py:.2f}" stroke="#333"/>')
                self.parts.append(
                    f'<text x="{x0 - 8}" y="{py + 4:.2f}" text-anchor="end" '
                    f'font-size="11">{_f(t)}</text>')

    def polyline(self, xs, ys, color, dash=None):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}"
                       for x, y in zip(xs, ys))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"{d}/>')

    def dots(self, xs, ys, color, r=2.5):
        for x, y in zip(xs, ys):
            self.parts.append(
                f'<circle cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" '
                f'r="{r}" fill="{color}"/>')

    def legend(self, names):
        y = _MT + 14
        for i, name in enumerate(names):
            color = _COLORS[i % len(_COLORS)]
            self.parts.append(
                f'<line x1="{_W - _MR - 150}" y1="{y}" '
                f'x2="{_W - _MR - 125}" y2="{y}" stroke="{color}" '
                f'stroke-width="2"/>')
            self.parts.append(
                f'<text x="{_W - _MR - 118}" y="{y + 4}" font-size="12">'
                f'{escape(name)}</text>')
            y += 18

    def metadata_table(self, header: list[str], rows) -> None:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_f(float(v)) if isinstance(v, (int, float, np.floating, np.integer)) else str(v)
                                  for v in row))
        body = escape("\n".join(lines))
        self.parts.append(f'<metadata id="data-table">{body}</metadata>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _limits(arrays) -> tuple[float, float]:
    vals = np.concatenate([np.asarray(a, dtype=float).ravel()
                           for a in arrays])
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        raise ConfigError("nothing finite to plot")
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        return lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(path: str, series: dict[str, tuple[np.ndarray, np.ndarray]],
              title: str, xlabel: str = "", ylabel: str = "") -> None:
    """Multi-series line chart; series maps name -> (x, y)."""
    if not series:
        raise ConfigError("no series to plot")
    xlim = _limits([xy[0] for xy in series.values()])
    ylim = _limits([xy[1] for xy in series.values()])
    c = _Canvas(xlim, ylim, title, xlabel, ylabel)
    names = list(series)
    for i, name in enumerate(names):
        xs, ys = series[name]
        keep = np.isfinite(np.asarray(xs, float)) & np.isfinite(
            np.asarray(ys, float))
        c.polyline(np.asarray(xs)[keep], np.asarray(ys)[keep],
                   _COLORS[i % len(_COLORS)])
    if len(names) > 1:
        c.legend(names)
    rows = []
    for name in names:
        xs, ys = series[name]
        for x, y in zip(xs, ys):
            rows.append([name, float(x), float(y)])
    c.metadata_table(["series", "x", "y"], rows)
    _atomic_write(path, c.render())


def scatter_plot(path: str, x: np.ndarray, y: np.ndarray, title: str,
                 xlabel: str = "", ylabel: str = "",
                 bands: tuple[np.ndarray, np.ndarray] | None = None,
                 diagonal: bool = False) -> None:
    """Scatter with optional lower/upper band polylines and y=x line."""
    arrays = [x, y]
    if bands is not None:
        arrays += [bands[0], bands[1]]
    xlim = _limits([x])
    ylim = _limits(arrays[1:] if bands is not None else [y])
    if diagonal:
        both = (min(xlim[0], ylim[0]), max(xlim[1], ylim[1]))
        xlim = ylim = both
    c = _Canvas(xlim, ylim, title, xlabel, ylabel)
    if diagonal:
        c.polyline(np.array(xlim), np.array(xlim), "#999", dash="4,3")
    if bands is not None:
        c.polyline(x, bands[0], "#d62728", dash="5,3")
        c.polyline(x, bands[1], "#d62728", dash="5,3")
    c.dots(x, y, "#1f77b4")
    rows = [[float(a), float(b)] for a, b in zip(x, y)]
    header = ["x", "y"]
    if bands is not None:
        header += ["lower", "upper"]
        rows = [[float(a), float(b), float(lo), float(hi)]
                for a, b, lo, hi in zip(x, y, bands[0], bands[1])]
    c.metadata_table(header, rows)
    _atomic_write(path, c.render())


def box_plot(path: str, positions: np.ndarray, boxes: list[dict],
             title: str, xlabel: str = "", ylabel: str = "",
             truth: np.ndarray | None = None) -> None:
    """Boxes given as dicts with q1, median, q3, lo, hi keys."""
    if len(positions) != len(boxes):
        raise ConfigError("positions and boxes must align")
    ys = [[b["lo"], b["hi"]] for b in boxes]
    if truth is not None:
        ys.append(list(np.asarray(truth, dtype=float)))
    xlim = _limits([positions])
    span = (xlim[1] - xlim[0]) or 1.0
    xlim = (xlim[0] - 0.02 * span, xlim[1] + 0.02 * span)
    ylim = _limits(ys)
    c = _Canvas(xlim, ylim, title, xlabel, ylabel)
    half = 0.35 * span / max(len(boxes), 1) / 2
    for pos, b in zip(positions, boxes):
        xl, xr = c.px(pos - half), c.px(pos + half)
        q1, q3 = c.py(b["q1"]), c.py(b["q3"])
        med = c.py(b["median"])
        lo, hi = c.py(b["lo"]), c.py(b["hi"])
        xc = c.px(pos)
        c.parts.append(f'<line x1="{xc:.2f}" y1="{lo:.2f}" x2="{xc:.2f}" '
                       f'y2="{q1:.2f}" stroke="#333"/>')
        c.parts.append(f'<line x1="{xc:.2f}" y1="{q3:.2f}" x2="{xc:.2f}" '
                       f'y2="{hi:.2f}" stroke="#333"/>')
        c.parts.append(
            f'<rect x="{xl:.2f}" y="{q3:.2f}" width="{xr - xl:.2f}" '
            f'height="{q1 - q3:.2f}" fill="#aec7e8" stroke="#333"/>')
        c.parts.append(f'<line x1="{xl:.2f}" y1="{med:.2f}" x2="{xr:.2f}" '
                       f'y2="{med:.2f}" stroke="#d62728" stroke-width="2"/>')
    if truth is not None:
        c.dots(positions, truth, "#2ca02c", r=3.0)
    header = ["position", "lo", "q1", "median", "q3", "hi"]
    rows = [[float(p), b["lo"], b["q1"], b["median"], b["q3"], b["hi"]]
            for p, b in zip(positions, boxes)]
    if truth is not None:
        header.append("truth")
        for row, tv in zip(rows, truth):
            row.append(float(tv))
    c.metadata_table(header, rows)
    _atomic_write(path, c.render())
