"""Minimal dependency-free SVG line plots (deterministic output)."""

from __future__ import annotations

import numpy as np

from .ioutil import atomic_write_text

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_plot(series, path, title: str = "", xlabel: str = "", ylabel: str = "",
                  log_y: bool = False, width: int = 640, height: int = 420) -> None:
    """Write a line plot; ``series`` is a list of (x, y, label) triples."""
    margin = 56
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin

    xs = np.concatenate([np.asarray(x, dtype=float) for x, _, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y, _ in series])
    if log_y:
        positive = ys[ys > 0]
        floor = positive.min() * 0.5 if positive.size else 1e-12
        ys = np.log10(np.maximum(ys, floor))
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi - x_lo < 1e-12:
        x_hi = x_lo + 1.0
    if y_hi - y_lo < 1e-12:
        y_hi = y_lo + 1.0

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#888"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-size="15" font-family="sans-serif">{title}</text>')
    if xlabel:
        parts.append(f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
                     f'font-size="12" font-family="sans-serif">{xlabel}</text>')
    if ylabel:
        label = f"log10 {ylabel}" if log_y else ylabel
        parts.append(f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" '
                     f'font-size="12" font-family="sans-serif" '
                     f'transform="rotate(-90 16 {height / 2:.1f})">{label}</text>')
    for tick in range(5):
        fx = x_lo + (x_hi - x_lo) * tick / 4
        fy = y_lo + (y_hi - y_lo) * tick / 4
        parts.append(f'<text x="{px(fx):.1f}" y="{height - margin + 16}" '
                     f'text-anchor="middle" font-size="10" '
                     f'font-family="sans-serif">{fx:.3g}</text>')
        parts.append(f'<text x="{margin - 6}" y="{py(fy) + 3:.1f}" text-anchor="end" '
                     f'font-size="10" font-family="sans-serif">{fy:.3g}</text>')
    for i, (x, y, label) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if log_y:
            positive = y[y > 0]
            floor = positive.min() * 0.5 if positive.size else 1e-12
            y = np.log10(np.maximum(y, floor))
        color = _COLORS[i % len(_COLORS)]
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        ly = margin + 16 + 16 * i
        parts.append(f'<line x1="{width - margin - 90}" y1="{ly - 4}" '
                     f'x2="{width - margin - 70}" y2="{ly - 4}" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{width - margin - 64}" y="{ly}" font-size="11" '
                     f'font-family="sans-serif">{label}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
