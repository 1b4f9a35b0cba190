"""Static SVG plots: embedding scatter coloured by accuracy and best-so-far curves.

Output is plain text built with fixed number formatting, so identical inputs
give byte-identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .search import Curve

WIDTH, HEIGHT, MARGIN = 640, 480, 50
# viridis-like stops for accuracy colouring
_STOPS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=np.float64)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _color(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0) * (len(_STOPS) - 1)
    i = min(int(t), len(_STOPS) - 2)
    rgb = _STOPS[i] + (t - i) * (_STOPS[i + 1] - _STOPS[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def _scale(v: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return out_lo + (v - lo) / span * (out_hi - out_lo)


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{_escape(title)}</text>',
    ]


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def scatter_svg(coords: np.ndarray, values: np.ndarray, labels: Sequence[str] | None = None,
                title: str = "embedding coloured by validation accuracy") -> str:
    """One circle per point; colour runs from the lowest to the highest value."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64)
    lines = _header(title)
    if len(coords):
        xs = _scale(coords[:, 0], coords[:, 0].min(), coords[:, 0].max(), MARGIN, WIDTH - MARGIN)
        ys = _scale(coords[:, 1], coords[:, 1].min(), coords[:, 1].max(), HEIGHT - MARGIN, MARGIN)
        vlo, vhi = float(values.min()), float(values.max())
        for i, (x, y, v) in enumerate(zip(xs, ys, values)):
            t = (v - vlo) / (vhi - vlo) if vhi > vlo else 0.5
            tip = f"<title>{_escape(labels[i])} {v:.4f}</title>" if labels is not None else ""
            lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{_color(t)}">{tip}</circle>')
        lines.append(f'<text x="{MARGIN}" y="{HEIGHT - 12}" font-family="sans-serif" font-size="11">'
                     f"accuracy {vlo:.3f} (dark) to {vhi:.3f} (light)</text>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def curves_svg(curves: Sequence[Curve], title: str = "best accuracy found so far") -> str:
    """One polyline per algorithm with a shaded 95% interval band."""
    lines = _header(title)
    if curves:
        n = max(len(c.mean) for c in curves)
        lo = min(float(np.min(c.ci_low)) for c in curves)
        hi = max(float(np.max(c.ci_high)) for c in curves)
        pad = 0.02 * (hi - lo) if hi > lo else 0.01
        lo, hi = lo - pad, hi + pad

        def px(step):
            return _scale(np.asarray(step, dtype=np.float64), 1, max(n, 2), MARGIN, WIDTH - MARGIN)

        def py(v):
            return _scale(np.asarray(v, dtype=np.float64), lo, hi, HEIGHT - MARGIN, MARGIN)

        lines.append(f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" '
                     'stroke="black"/>')
        lines.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>')
        lines.append(f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{lo:.3f}</text>')
        lines.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{hi:.3f}</text>')
        lines.append(f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">evaluations ({n})</text>')
        for j, c in enumerate(curves):
            color = PALETTE[j % len(PALETTE)]
            steps = c.steps
            xs = px(steps)
            band = [f"{x:.2f},{y:.2f}" for x, y in zip(xs, py(c.ci_high))]
            band += [f"{x:.2f},{y:.2f}" for x, y in zip(xs[::-1], py(c.ci_low)[::-1])]
            lines.append(f'<polygon points="{" ".join(band)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, py(c.mean)))
            lines.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            lines.append(f'<text x="{WIDTH - MARGIN - 4}" y="{MARGIN + 14 * (j + 1)}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="11" fill="{color}">{_escape(c.algorithm)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(path: str | Path, svg: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
