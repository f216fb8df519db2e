"""Learning-curve rendering: metrics.csv -> standalone SVG, no plotting deps.

One polyline per input file (env_step on x, avg_return_100 on y); a single
data point degenerates to a circle marker. Colors cycle; the legend names
each input file.
"""

from __future__ import annotations

import os

from .runio import METRICS_HEADER

WIDTH, HEIGHT = 840, 520
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 40, 50
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
          "#8c564b", "#e377c2", "#17becf"]


class MetricsError(ValueError):
    """Malformed metrics file; carries the offending row number."""

    def __init__(self, path: str, row: int, msg: str):
        super().__init__(f"{path}:{row}: {msg}")
        self.row = row


def read_series(path: str) -> list[tuple[int, float]]:
    """(env_step, avg_return_100) pairs from one metrics file."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise MetricsError(path, 1, "missing or wrong header")
    points = []
    for row, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cols = line.split(",")
        if len(cols) != 10:
            raise MetricsError(path, row, f"expected 10 columns, got {len(cols)}")
        try:
            points.append((int(cols[0]), float(cols[3])))
        except ValueError as e:
            raise MetricsError(path, row, str(e)) from None
    if not points:
        raise MetricsError(path, 2, "no data rows")
    return points


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def render_svg(series: dict[str, list[tuple[int, float]]], title: str = "") -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
           f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="15">{title}</text>')
    # frame and ticks
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#444" stroke-width="1"/>')
    for tx in _ticks(x_lo, x_hi):
        px = sx(tx)
        out.append(f'<line x1="{px:.1f}" y1="{MARGIN_T + ph}" x2="{px:.1f}" '
                   f'y2="{MARGIN_T + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{px:.1f}" y="{MARGIN_T + ph + 20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{int(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        py = sy(ty)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.1f}" x2="{MARGIN_L}" '
                   f'y2="{py:.1f}" stroke="#444"/>')
        out.append(f'<text x="{MARGIN_L - 9}" y="{py + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{ty:.1f}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{HEIGHT - 12}" '
               f'text-anchor="middle" font-family="sans-serif" font-size="12">'
               f'environment steps</text>')
    out.append(f'<text x="16" y="{MARGIN_T + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.1f})">'
               f'avg return (last 100 episodes)</text>')
    # curves
    for k, (label, pts) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        if len(pts) == 1:
            x, y = pts[0]
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" '
                       f'fill="{color}"/>')
        else:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline points="{coords}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN_T + 16 + 18 * k
        out.append(f'<line x1="{MARGIN_L + 10}" y1="{ly - 4}" '
                   f'x2="{MARGIN_L + 34}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{MARGIN_L + 40}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_files(paths: list[str], out_svg: str, title: str = "") -> None:
    series = {}
    for p in paths:
        label = os.path.splitext(os.path.basename(p))[0]
        if label == "metrics":  # disambiguate by run directory name
            parent = os.path.basename(os.path.dirname(os.path.abspath(p)))
            label = parent or label
        base = label
        k = 2
        while label in series:
            label = f"{base}-{k}"
            k += 1
        series[label] = read_series(p)
    with open(out_svg, "w") as fh:
        fh.write(render_svg(series, title))
