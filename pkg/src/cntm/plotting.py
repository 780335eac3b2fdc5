"""Standalone SVG box plots for baseline-relative comparisons.

Hand-rendered vector output so plotting needs no extra dependency; the
statistics behind every figure are also written as CSV so results stay
machine-checkable.
"""

from __future__ import annotations

import csv
from xml.sax.saxutils import escape

import numpy as np

from cntm.harness import BoxStats

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 50, 60


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw)) if raw > 0 else 1.0
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = np.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12:
        ticks.append(round(t, 10))
        t += step
    return ticks


def render_box_plot(stats: list[BoxStats], out_path, *, title: str | None = None,
                    y_label: str = "path accuracy difference") -> None:
    """Write one vertical box per predictor, relative to the baseline."""
    if not stats:
        raise ValueError("nothing to plot")
    baseline = stats[0].baseline
    values = []
    for s in stats:
        values += [s.minimum, s.maximum]
    lo, hi = min(values + [0.0]), max(values + [0.0])
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def ypix(v: float) -> float:
        return MARGIN_T + plot_h * (hi - v) / (hi - lo)

    n = len(stats)
    slot_w = plot_w / n
    box_w = min(60.0, slot_w * 0.5)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title is None:
        title = f"link predictors relative to {baseline}"
    parts.append(
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{escape(title)}</text>')

    # axes
    x0, y0 = MARGIN_L, MARGIN_T + plot_h
    parts.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" '
                 'stroke="black"/>')
    for t in _ticks(lo, hi):
        y = ypix(t)
        parts.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{t:g}</text>')
    parts.append(
        f'<text x="16" y="{MARGIN_T + plot_h / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {MARGIN_T + plot_h / 2:.2f})">'
        f'{escape(y_label)}</text>')

    # zero reference
    yz = ypix(0.0)
    parts.append(f'<line x1="{x0}" y1="{yz:.2f}" x2="{x0 + plot_w}" '
                 f'y2="{yz:.2f}" stroke="#888" stroke-dasharray="5,4"/>')

    for idx, s in enumerate(stats):
        cx = x0 + slot_w * (idx + 0.5)
        left, right = cx - box_w / 2, cx + box_w / 2
        y_q1, y_q3 = ypix(s.q1), ypix(s.q3)
        y_med = ypix(s.median)
        y_lo, y_hi = ypix(s.whisker_lo), ypix(s.whisker_hi)
        parts.append(f'<line x1="{cx:.2f}" y1="{y_hi:.2f}" x2="{cx:.2f}" '
                     f'y2="{y_q3:.2f}" stroke="black"/>')
        parts.append(f'<line x1="{cx:.2f}" y1="{y_q1:.2f}" x2="{cx:.2f}" '
                     f'y2="{y_lo:.2f}" stroke="black"/>')
        for y_w in (y_hi, y_lo):
            parts.append(f'<line x1="{cx - box_w / 4:.2f}" y1="{y_w:.2f}" '
                         f'x2="{cx + box_w / 4:.2f}" y2="{y_w:.2f}" '
                         'stroke="black"/>')
        parts.append(f'<rect x="{left:.2f}" y="{y_q3:.2f}" width="{box_w:.2f}" '
                     f'height="{max(y_q1 - y_q3, 0.5):.2f}" fill="#9ecae9" '
                     'stroke="black"/>')
        parts.append(f'<line x1="{left:.2f}" y1="{y_med:.2f}" x2="{right:.2f}" '
                     f'y2="{y_med:.2f}" stroke="black" stroke-width="2"/>')
        for o in s.outliers:
            parts.append(f'<circle cx="{cx:.2f}" cy="{ypix(o):.2f}" r="2.5" '
                         'fill="none" stroke="black"/>')
        parts.append(f'<text x="{cx:.2f}" y="{y0 + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">'
                     f'{escape(s.predictor)}</text>')
    parts.append(f'<text x="{x0 + plot_w / 2:.2f}" y="{y0 + 40}" '
                 'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">baseline: {escape(baseline)}</text>')
    parts.append("</svg>")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def write_box_stats(stats: list[BoxStats], path) -> None:
    """CSV twin of the figure: exact numbers behind every box."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["predictor", "baseline", "count", "min", "q1", "median",
                    "q3", "max", "whisker_lo", "whisker_hi", "outliers"])
        for s in stats:
            w.writerow([s.predictor, s.baseline, s.count, repr(s.minimum),
                        repr(s.q1), repr(s.median), repr(s.q3),
                        repr(s.maximum), repr(s.whisker_lo),
                        repr(s.whisker_hi),
                        ";".join(repr(o) for o in s.outliers)])
