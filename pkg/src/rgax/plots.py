"""Static SVG plots rendered from the plot-data CSV of an evaluation.

Both plots are pure functions of the CSV text, so re-rendering from a saved
CSV reproduces the SVG byte for byte.
"""

import csv
import io
import math
from pathlib import Path

import numpy as np

WIDTH, HEIGHT, MARGIN = 480, 480, 56


def read_plot_data(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        for k in ("classical", "residualized", "lower", "upper", "p_value"):
            r[k] = float(r[k]) if r.get(k, "") != "" else float("nan")
    return rows


def _f(v):
    return f"{v:.2f}"


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def _range(values):
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return -1.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _header(w, h):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" '
            f'height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>']


def scatter_svg(rows, label="metric"):
    """Classical against residualized metric with the identity line and R."""
    xs = [r["classical"] for r in rows]
    ys = [r["residualized"] for r in rows]
    lo, hi = _range(xs + ys)
    span = WIDTH - 2 * MARGIN

    def px(v):
        return MARGIN + (v - lo) / (hi - lo) * span

    def py(v):
        return HEIGHT - MARGIN - (v - lo) / (hi - lo) * span

    out = _header(WIDTH, HEIGHT)
    out.append(f'<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" '
               'fill="none" stroke="black"/>')
    for t in _ticks(lo, hi):
        out.append(f'<text x="{_f(px(t))}" y="{HEIGHT - MARGIN + 16}" '
                   f'text-anchor="middle">{_f(t)}</text>')
        out.append(f'<text x="{MARGIN - 6}" y="{_f(py(t) + 4)}" '
                   f'text-anchor="end">{_f(t)}</text>')
    out.append(f'<line x1="{_f(px(lo))}" y1="{_f(py(lo))}" x2="{_f(px(hi))}" '
               f'y2="{_f(py(hi))}" stroke="black" stroke-dasharray="4 3"/>')
    for r, x, y in zip(rows, xs, ys):
        if math.isfinite(x) and math.isfinite(y):
            out.append(f'<circle cx="{_f(px(x))}" cy="{_f(py(y))}" r="3" '
                       f'fill="steelblue" fill-opacity="0.7"><title>{_esc(r["actor_id"])}'
                       '</title></circle>')
    finite = [(x, y) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
    r_val = float("nan")
    if len(finite) >= 2:
        a, b = np.array(finite).T
        if np.std(a) > 0 and np.std(b) > 0:
            r_val = float(np.corrcoef(a, b)[0, 1])
    r_text = "NA" if math.isnan(r_val) else f"{r_val:.2f}"
    out.append(f'<text x="{MARGIN + 8}" y="{MARGIN + 16}">R = {r_text}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" text-anchor="middle">'
               f'{_esc(label)}</text>')
    out.append(f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {HEIGHT / 2})">r{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def interval_svg(rows, label="metric", max_rows=None):
    """Residualized metric with its interval per actor, sorted descending."""
    rows = sorted(rows, key=lambda r: (-r["residualized"], r["actor_id"]))
    if max_rows is not None:
        rows = rows[:max_rows]
    step, left = 16, 140
    h = 2 * MARGIN + step * max(len(rows), 1)
    lo, hi = _range([r["residualized"] for r in rows] + [r["lower"] for r in rows]
                    + [r["upper"] for r in rows] + [0.0])
    span = WIDTH - left - MARGIN

    def px(v):
        v = min(max(v, lo), hi)
        return left + (v - lo) / (hi - lo) * span

    out = _header(WIDTH, h)
    out.append(f'<line x1="{_f(px(0.0))}" y1="{MARGIN}" x2="{_f(px(0.0))}" '
               f'y2="{h - MARGIN}" stroke="gray" stroke-dasharray="4 3"/>')
    for t in _ticks(lo, hi):
        out.append(f'<text x="{_f(px(t))}" y="{h - MARGIN + 16}" '
                   f'text-anchor="middle">{_f(t)}</text>')
    for i, r in enumerate(rows):
        y = MARGIN + step * i + step / 2
        out.append(f'<text x="{left - 8}" y="{_f(y + 4)}" text-anchor="end">'
                   f'{_esc(r["actor_id"])}</text>')
        out.append(f'<line x1="{_f(px(r["lower"]))}" y1="{_f(y)}" '
                   f'x2="{_f(px(r["upper"]))}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<circle cx="{_f(px(r["residualized"]))}" cy="{_f(y)}" r="3" '
                   'fill="black"/>')
    out.append(f'<text x="{left + span / 2}" y="{h - 14}" text-anchor="middle">'
               f'r{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_plots(plot_data_path, out_dir, label="metric"):
    """Write ``scatter.svg`` and ``intervals.svg`` from a plot-data CSV."""
    text = Path(plot_data_path).read_text(encoding="utf-8")
    rows = read_plot_data(text)
    out_dir = Path(out_dir)
    paths = {"scatter": out_dir / "scatter.svg", "intervals": out_dir / "intervals.svg"}
    paths["scatter"].write_text(scatter_svg(rows, label.upper()), encoding="utf-8")
    paths["intervals"].write_text(interval_svg(rows, label.upper()), encoding="utf-8")
    return paths
