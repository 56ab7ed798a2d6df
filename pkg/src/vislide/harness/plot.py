"""Minimal SVG line and scatter plots (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H = 640, 400
ML, MR, MT, MB = 70, 20, 30, 50


def _ticks(lo, hi, n=5, log=False):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        return [float(k) for k in range(a, b + 1)]
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 1e-9, step))


def _prep(v, log):
    v = np.asarray(v, float)
    if log:
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(v > 0, np.log10(np.where(v > 0, v, 1.0)), np.nan)
    return v


def _fmt_tick(t, log):
    return f"1e{int(t)}" if log else f"{t:g}"


def render(series, kind="line", title="", xlabel="", ylabel="", logx=False, logy=False) -> str:
    """``series`` is a list of (label, x, y). Returns the SVG document text."""
    pts = [(lab, _prep(x, logx), _prep(y, logy)) for lab, x, y in series]
    xs = np.concatenate([p[1] for p in pts]) if pts else np.zeros(1)
    ys = np.concatenate([p[2] for p in pts]) if pts else np.zeros(1)
    ok = np.isfinite(xs) & np.isfinite(ys)
    if not ok.any():
        xs, ys, ok = np.zeros(1), np.zeros(1), np.ones(1, bool)
    x0, x1 = float(xs[ok].min()), float(xs[ok].max())
    y0, y1 = float(ys[ok].min()), float(ys[ok].max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return ML + (x - x0) / (x1 - x0) * (W - ML - MR)

    def sy(y):
        return H - MB - (y - y0) / (y1 - y0) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1, log=logx):
        if x0 <= t <= x1:
            out.append(f'<line x1="{sx(t):.1f}" y1="{H - MB}" x2="{sx(t):.1f}" y2="{H - MB + 4}" stroke="black"/>')
            out.append(f'<text x="{sx(t):.1f}" y="{H - MB + 16}" text-anchor="middle">{_fmt_tick(t, logx)}</text>')
    for t in _ticks(y0, y1, log=logy):
        if y0 <= t <= y1:
            out.append(f'<line x1="{ML - 4}" y1="{sy(t):.1f}" x2="{ML}" y2="{sy(t):.1f}" stroke="black"/>')
            out.append(f'<text x="{ML - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{_fmt_tick(t, logy)}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" text-anchor="middle" transform="rotate(-90 16 {H / 2})">'
               f'{escape(ylabel)}</text>')
    for k, (lab, x, y) in enumerate(pts):
        c = PALETTE[k % len(PALETTE)]
        good = np.isfinite(x) & np.isfinite(y)
        if kind == "line":
            path = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[good], y[good]))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{path}"/>')
        else:
            for a, b in zip(x[good], y[good]):
                out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3.5" fill="{c}"/>')
        ly = MT + 14 + 14 * k
        out.append(f'<rect x="{W - MR - 150}" y="{ly - 8}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - MR - 135}" y="{ly + 1}">{escape(str(lab))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csv(columns, rows, x: str, ys, kind="line", group: str | None = None, **kw) -> str:
    """Plot columns of a table read with :func:`io.read_csv` (rows of strings)."""
    idx = {c: i for i, c in enumerate(columns)}
    for name in [x, *ys] + ([group] if group else []):
        if name not in idx:
            raise KeyError(f"column {name!r} not in CSV (have {', '.join(columns)})")
    series = []
    if group:
        labels = []
        for r in rows:
            if r[idx[group]] not in labels:
                labels.append(r[idx[group]])
        for lab in labels:
            sel = [r for r in rows if r[idx[group]] == lab]
            for y in ys:
                series.append((lab if len(ys) == 1 else f"{lab} {y}",
                               [float(r[idx[x]]) for r in sel], [float(r[idx[y]]) for r in sel]))
    else:
        for y in ys:
            series.append((y, [float(r[idx[x]]) for r in rows], [float(r[idx[y]]) for r in rows]))
    kw.setdefault("xlabel", x)
    kw.setdefault("ylabel", ys[0] if len(ys) == 1 else "")
    return render(series, kind, **kw)
