"""Minimal deterministic SVG emitter for log-log scaling plots.

Hand-rolled rather than delegated to a plotting package so that a rerun
with the same inputs produces byte-identical files: every coordinate is
formatted with a fixed precision, nothing embeds timestamps or session
ids, and element order follows input order.
"""

from __future__ import annotations

import math

__all__ = ["LogLogSeries", "loglog_svg"]

PALETTE = ("#1f5fa8", "#c23b22", "#1e7d3e", "#7a4a9e", "#b8860b", "#4a6072")

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 24, 42, 48


class LogLogSeries:
    """One polyline on a log-log plot, with an optional fitted slope.

    Points with non-positive or non-finite values are dropped (they have no
    place on a log axis); the fitted line, when a slope is given, is drawn
    through the geometric center of the surviving points.
    """

    def __init__(self, label, x, y, slope=None, stderr=None):
        pairs = [(float(a), float(b)) for a, b in zip(x, y)
                 if a > 0.0 and b > 0.0 and math.isfinite(a) and math.isfinite(b)]
        self.label = str(label)
        self.x = [p[0] for p in pairs]
        self.y = [p[1] for p in pairs]
        self.slope = None if slope is None or not math.isfinite(slope) else float(slope)
        self.stderr = None if stderr is None or not math.isfinite(stderr) else float(stderr)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _decade_ticks(lo: float, hi: float):
    first = math.floor(math.log10(lo))
    last = math.ceil(math.log10(hi))
    if last == first:
        last += 1
    return [10.0**p for p in range(first, last + 1)]


def _tick_label(value: float) -> str:
    exp = round(math.log10(value))
    return f"1e{exp:+03d}" if exp else "1"


class _Axes:
    def __init__(self, xs, ys):
        self.xticks = _decade_ticks(min(xs), max(xs))
        self.yticks = _decade_ticks(min(ys), max(ys))
        self.x0, self.x1 = math.log10(self.xticks[0]), math.log10(self.xticks[-1])
        self.y0, self.y1 = math.log10(self.yticks[0]), math.log10(self.yticks[-1])

    def px(self, x: float) -> float:
        u = (math.log10(x) - self.x0) / (self.x1 - self.x0)
        return MARGIN_L + u * (WIDTH - MARGIN_L - MARGIN_R)

    def py(self, y: float) -> float:
        u = (math.log10(y) - self.y0) / (self.y1 - self.y0)
        return HEIGHT - MARGIN_B - u * (HEIGHT - MARGIN_T - MARGIN_B)


def loglog_svg(series, title: str, xlabel: str, ylabel: str) -> str:
    """SVG text for the given LogLogSeries collection."""
    series = [s for s in series if len(s.x) >= 1]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
           f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH // 2}" y="24" font-family="monospace" '
           f'font-size="15" text-anchor="middle">{title}</text>']
    if not series:
        out.append(f'<text x="{WIDTH // 2}" y="{HEIGHT // 2}" '
                   'font-family="monospace" font-size="13" '
                   'text-anchor="middle">no positive data</text></svg>')
        return "\n".join(out) + "\n"

    ax = _Axes([v for s in series for v in s.x], [v for s in series for v in s.y])
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
               f'height="{plot_h}" fill="none" stroke="#333" stroke-width="1"/>')
    for t in ax.xticks:
        px = _fmt(ax.px(t))
        out.append(f'<line x1="{px}" y1="{MARGIN_T}" x2="{px}" '
                   f'y2="{HEIGHT - MARGIN_B}" stroke="#ddd" stroke-width="0.7"/>')
        out.append(f'<text x="{px}" y="{HEIGHT - MARGIN_B + 18}" '
                   f'font-family="monospace" font-size="11" '
                   f'text-anchor="middle">{_tick_label(t)}</text>')
    for t in ax.yticks:
        py = _fmt(ax.py(t))
        out.append(f'<line x1="{MARGIN_L}" y1="{py}" x2="{WIDTH - MARGIN_R}" '
                   f'y2="{py}" stroke="#ddd" stroke-width="0.7"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{py}" font-family="monospace" '
                   f'font-size="11" text-anchor="end">{_tick_label(t)}</text>')
    out.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" '
               f'font-family="monospace" font-size="12" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{HEIGHT // 2}" font-family="monospace" '
               f'font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>')

    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}"
                       for x, y in zip(s.x, s.y))
        if len(s.x) > 1:
            out.append(f'<polyline points="{pts}" fill="none" '
                       f'stroke="{color}" stroke-width="1.6"/>')
        for x, y in zip(s.x, s.y):
            out.append(f'<circle cx="{_fmt(ax.px(x))}" cy="{_fmt(ax.py(y))}" '
                       f'r="3" fill="{color}"/>')
        legend = s.label
        if s.slope is not None and len(s.x) > 1:
            legend += f" (slope {s.slope:+.3f}"
            if s.stderr is not None:
                legend += f" &#177; {s.stderr:.3f}"
            legend += ")"
            # dashed fitted line through the geometric center of the points
            cx = math.exp(sum(math.log(v) for v in s.x) / len(s.x))
            cy = math.exp(sum(math.log(v) for v in s.y) / len(s.y))
            xs = (min(s.x), max(s.x))
            fit = " ".join(
                f"{_fmt(ax.px(x))},{_fmt(ax.py(cy * (x / cx) ** s.slope))}"
                for x in xs)
            out.append(f'<polyline points="{fit}" fill="none" stroke="{color}" '
                       f'stroke-width="1" stroke-dasharray="5,4"/>')
        ly = MARGIN_T + 16 + 16 * idx
        out.append(f'<line x1="{MARGIN_L + 8}" y1="{ly - 4}" '
                   f'x2="{MARGIN_L + 30}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{MARGIN_L + 36}" y="{ly}" '
                   f'font-family="monospace" font-size="12">{legend}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
