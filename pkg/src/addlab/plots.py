"""Minimal hand-rolled SVG emission for 2-D scatter and labeled point plots."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["scatter_svg", "points_svg"]

_PALETTE = (
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
    "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd",
)


def _svg_header(width, height, title):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f"<title>{title}</title>\n"
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )


def points_svg(path, points: np.ndarray, labels=None, title="samples", size=480) -> None:
    """Scatter a 2-D point set, colored by label when given."""
    points = np.asarray(points)
    if points.shape[1] != 2:
        raise ValueError("points_svg needs 2-D points")
    lo, hi = points.min() - 0.5, points.max() + 0.5
    span = hi - lo

    def sx(v):
        return (v - lo) / span * (size - 40) + 20

    def sy(v):
        return size - ((v - lo) / span * (size - 40) + 20)

    parts = [_svg_header(size, size, title)]
    for i, (x, y) in enumerate(points):
        color = _PALETTE[int(labels[i]) % len(_PALETTE)] if labels is not None else "#4c72b0"
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2" fill="{color}" fill-opacity="0.6"/>\n')
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))


def scatter_svg(path, xs, ys, names, title="plot", xlabel="x", ylabel="y", size=480) -> None:
    """Labeled scatter with axes; one circle per point."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) != len(ys) or len(xs) != len(names):
        raise ValueError("xs, ys, names must align")
    pad = 60
    x_lo, x_hi = xs.min(), xs.max()
    y_lo, y_hi = ys.min(), ys.max()
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(v):
        return pad + (v - x_lo) / x_span * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - y_lo) / y_span * (size - 2 * pad)

    parts = [_svg_header(size, size, title)]
    parts.append(
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{size - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{size - pad}" stroke="black"/>\n'
        f'<text x="{size // 2}" y="{size - 15}" text-anchor="middle" font-size="12">{xlabel}</text>\n'
        f'<text x="15" y="{size // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {size // 2})">{ylabel}</text>\n'
    )
    for i, name in enumerate(names):
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(
            f'<circle cx="{sx(xs[i]):.2f}" cy="{sy(ys[i]):.2f}" r="5" fill="{color}"/>\n'
            f'<text x="{sx(xs[i]) + 8:.2f}" y="{sy(ys[i]) - 6:.2f}" font-size="11">{name}</text>\n'
        )
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))
