"""Standalone SVG line charts for sweep results."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 560, 360
MARGIN = {"left": 64, "right": 140, "top": 36, "bottom": 52}
SERIES = ((False, "noise-free", "#1f77b4"), (True, "AWGN", "#d62728"))
LABELS = {"val_accuracy": "validation accuracy", "bleu": "BLEU"}


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def sweep_svg(rows: list[dict], metric: str) -> str:
    """Two-series line chart of ``metric`` against erasure probability."""
    pts = [(r["p_erase"], r[metric], r["awgn"]) for r in rows
           if r.get("status") == "ok" and not math.isnan(r[metric])]
    xs = [p for p, _, _ in pts] or [0.0, 1.0]
    ys = [v for _, v, _ in pts] or [0.0, 1.0]
    x0, x1 = min(0.0, min(xs)), max(max(xs), 1e-9)
    y0, y1 = min(ys), max(ys)
    pad = (y1 - y0) * 0.1 or abs(y1) * 0.1 or 1.0
    y0, y1 = y0 - pad, y1 + pad
    L, T = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - L - MARGIN["right"]
    ph = HEIGHT - T - MARGIN["bottom"]

    def sx(x):
        return L + (x - x0) / (x1 - x0) * pw if x1 > x0 else L + pw / 2

    def sy(y):
        return T + (1 - (y - y0) / (y1 - y0)) * ph

    label = LABELS.get(metric, metric)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{L + pw / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
        f'{escape(label)} vs. erasure probability</text>',
        f'<line x1="{L}" y1="{T + ph}" x2="{L + pw}" y2="{T + ph}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{T + ph}" stroke="black"/>',
    ]
    for t in sorted(set(xs)):
        out.append(f'<line x1="{sx(t):.1f}" y1="{T + ph}" x2="{sx(t):.1f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{T + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{L - 5}" y1="{sy(t):.1f}" x2="{L}" y2="{sy(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{L + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">erasure probability p</text>')
    out.append(f'<text x="16" y="{T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {T + ph / 2:.1f})">{escape(label)}</text>')
    for i, (flag, name, color) in enumerate(SERIES):
        series = sorted((p, v) for p, v, a in pts if a == flag)
        if not series:
            continue
        coords = " ".join(f"{sx(p):.1f},{sy(v):.1f}" for p, v in series)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for p, v in series:
            out.append(f'<circle cx="{sx(p):.1f}" cy="{sy(v):.1f}" r="3" fill="{color}"/>')
        ly = T + 10 + 20 * i
        lx = L + pw + 16
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
