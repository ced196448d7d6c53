#!/usr/bin/env python3
"""From a hand-drawn polyline to row-anchor grid cells and back."""

import numpy as np

from lanekit.geometry import RowAnchorGrid, decode, encode, fit_spline, sample_at_anchors

# an annotator clicked six points along a curving lane (x, y in pixels)
polyline = [(412, 710), (446, 600), (488, 490), (540, 380), (596, 280), (648, 200)]

curve = fit_spline(polyline)
print(f"curve domain: y in [{curve.y_min:.0f}, {curve.y_max:.0f}]")
print(f"x at y=450: {curve(450.0):.2f}")

# TuSimple-style anchors every 10 px; anchors above the lane start are -2
grid = RowAnchorGrid(image_width=1280, image_height=720,
                     h_samples=tuple(range(160, 712, 10)), w=100)
xs = sample_at_anchors(curve, grid)
absent = sum(1 for v in xs if v == -2)
print(f"{len(xs)} anchors, {absent} above the annotated extent (marked -2)")

# positions become one of w+1 grid cells; index w means "no lane here"
cells = encode([xs], grid)
print("first ten cells:", cells[0][:10], f"(background index = {grid.background_index})")

# a one-hot reconstruction decodes back to within one cell width
logits = np.zeros((1, grid.h, grid.w + 1))
logits[0, np.arange(grid.h), cells[0]] = 30.0
decoded = decode(logits, grid)[0]
real = [(a, b) for a, b in zip(decoded, xs) if b != -2]
worst = max(abs(a - b) for a, b in real)
print(f"round-trip error over {len(real)} anchors: worst {worst:.2f} px "
      f"(cell width {grid.cell_width:.1f} px)")
