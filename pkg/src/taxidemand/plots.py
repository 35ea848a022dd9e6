"""Minimal static SVG line charts (presentational only)."""
from __future__ import annotations

import os
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_chart(
    x_labels: Sequence[str],
    series: Mapping[str, Sequence[float]],
    title: str,
    y_label: str = "",
    width: int = 720,
    height: int = 360,
) -> str:
    """One polyline per series over categorical x positions; NaN values break the line."""
    left, right, top, bottom = 60, 20, 40, 70
    pw, ph = width - left - right, height - top - bottom
    values = np.array([v for s in series.values() for v in s], dtype=np.float64)
    values = values[np.isfinite(values)]
    lo, hi = (float(values.min()), float(values.max())) if values.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    n = max(len(x_labels), 2)

    def px(i):
        return left + pw * i / (n - 1)

    def py(v):
        return top + ph * (1 - (v - lo) / (hi - lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        out.append(f'<text x="{left - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    step = max(1, len(x_labels) // 12)
    for i, lab in enumerate(x_labels):
        if i % step == 0:
            out.append(
                f'<text x="{px(i):.1f}" y="{top + ph + 14}" text-anchor="end" '
                f'transform="rotate(-45 {px(i):.1f} {top + ph + 14})">{escape(str(lab))}</text>'
            )
    if y_label:
        out.append(
            f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {top + ph / 2:.1f})">'
            f"{escape(y_label)}</text>"
        )
    for j, (name, ys) in enumerate(series.items()):
        color = COLORS[j % len(COLORS)]
        seg: list[str] = []
        segments = []
        for i, v in enumerate(ys):
            if v is None or not np.isfinite(v):
                if seg:
                    segments.append(seg)
                seg = []
                continue
            seg.append(f"{px(i):.1f},{py(float(v)):.1f}")
        if seg:
            segments.append(seg)
        for s in segments:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(s)}"/>')
        out.append(f'<text x="{left + 10 + 110 * j}" y="{height - 8}" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(text: str, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
