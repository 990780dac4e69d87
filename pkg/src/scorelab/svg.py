"""Minimal hand-written SVG: scatter plots and polyline charts.

Plots are a convenience next to the CSV outputs, so only two primitives exist
and nothing is imported beyond numpy.
"""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class _Frame:
    """Maps data coordinates into a padded pixel box (y axis pointing up)."""

    def __init__(self, xs, ys, width, height, pad=40, log_y=False):
        self.width, self.height, self.pad, self.log_y = width, height, pad, log_y
        ys = np.log10(ys) if log_y else ys
        self.x0, self.x1 = float(np.min(xs)), float(np.max(xs))
        self.y0, self.y1 = float(np.min(ys)), float(np.max(ys))
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x):
        return self.pad + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (self.width - 2 * self.pad)

    def py(self, y):
        y = np.log10(y) if self.log_y else np.asarray(y)
        return self.height - self.pad - (y - self.y0) / (self.y1 - self.y0) * (self.height - 2 * self.pad)


def _document(width, height, body, title):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )
    if title:
        head += f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
    return head + "\n".join(body) + "\n</svg>\n"


def scatter(layers, path=None, width=500, height=500, title="", radius=1.5):
    """``layers`` is a list of (points (n, 2), colour, label). Returns the SVG text."""
    pts = np.vstack([np.asarray(p, dtype=float)[:, :2] for p, _, _ in layers])
    span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-12)
    cx, cy = pts[:, 0].min() + np.ptp(pts[:, 0]) / 2, pts[:, 1].min() + np.ptp(pts[:, 1]) / 2
    frame = _Frame([cx - span / 2, cx + span / 2], [cy - span / 2, cy + span / 2], width, height)
    body = []
    for k, (p, colour, label) in enumerate(layers):
        p = np.asarray(p, dtype=float)
        xs, ys = frame.px(p[:, 0]), frame.py(p[:, 1])
        circles = "".join(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}"/>' for x, y in zip(xs, ys))
        body.append(f'<g fill="{colour}" fill-opacity="0.6">{circles}</g>')
        body.append(f'<text x="{width - 10}" y="{40 + 16 * k}" text-anchor="end" font-size="12" fill="{colour}">'
                    f"{escape(label)}</text>")
    svg = _document(width, height, body, title)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg


def line_chart(x, series, path=None, width=640, height=400, title="", log_y=False, xlabel="", ylabel=""):
    """``series`` maps a label to a y array sharing the abscissa ``x``."""
    x = np.asarray(x, dtype=float)
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    if log_y:
        ys = ys[ys > 0]
    frame = _Frame(x, ys, width, height, pad=50, log_y=log_y)
    body = [
        f'<line x1="{frame.pad}" y1="{height - frame.pad}" x2="{width - frame.pad}" y2="{height - frame.pad}" '
        'stroke="black"/>',
        f'<line x1="{frame.pad}" y1="{frame.pad}" x2="{frame.pad}" y2="{height - frame.pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 14 {height / 2:.1f})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
    ]
    for k, (label, y) in enumerate(series.items()):
        y = np.asarray(y, dtype=float)
        keep = y > 0 if log_y else np.isfinite(y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(frame.px(x[keep]), frame.py(y[keep])))
        colour = PALETTE[k % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{width - frame.pad}" y="{frame.pad + 16 * k}" text-anchor="end" font-size="12" '
                    f'fill="{colour}">{escape(label)}</text>')
    svg = _document(width, height, body, title)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
