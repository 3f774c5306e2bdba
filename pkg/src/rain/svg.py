"""Connectivity-matrix heatmaps as standalone SVG files.

A fixed monotone white-to-blue ramp over [0, 1] keeps figures comparable
across runs; values outside the range are clipped.
"""

import numpy as np

CELL = 24
MARGIN = 28
RAMP_LOW = (255, 255, 255)
RAMP_HIGH = (8, 48, 107)


def _color(v):
    v = min(max(float(v), 0.0), 1.0)
    r, g, b = (int(round(lo + (hi - lo) * v)) for lo, hi in zip(RAMP_LOW, RAMP_HIGH))
    return f"#{r:02x}{g:02x}{b:02x}"


def _grid(matrix, x0, y0, title):
    n = matrix.shape[0]
    parts = [f'<text x="{x0 + n * CELL / 2:.0f}" y="{y0 - 8}" text-anchor="middle" '
             f'font-family="monospace" font-size="12">{title}</text>']
    for i in range(n):
        for j in range(n):
            parts.append(
                f'<rect class="cell" x="{x0 + j * CELL}" y="{y0 + i * CELL}" '
                f'width="{CELL}" height="{CELL}" fill="{_color(matrix[i, j])}" '
                f'stroke="#cccccc" stroke-width="0.5"/>')
    return parts


def heatmap_svg(matrix, title="weights"):
    """One N x N grid; returns the SVG document text."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    width = 2 * MARGIN + n * CELL
    height = 2 * MARGIN + n * CELL
    body = _grid(m, MARGIN, MARGIN, title)
    return _document(width, height, body)


def side_by_side_svg(truth, estimate, titles=("truth", "estimate")):
    """Two grids sharing one color scale, truth on the left."""
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    n = t.shape[0]
    gap = 2 * MARGIN
    width = 2 * MARGIN + 2 * n * CELL + gap
    height = 2 * MARGIN + n * CELL
    body = _grid(t, MARGIN, MARGIN, titles[0])
    body += _grid(e, MARGIN + n * CELL + gap, MARGIN, titles[1])
    return _document(width, height, body)


def _document(width, height, body_parts):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head] + body_parts + ["</svg>"]) + "\n"


def write_svg(path, text):
    with open(path, "w") as fh:
        fh.write(text)
