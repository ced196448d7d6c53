#!/usr/bin/env python3
"""The training objective piece by piece, and how predictions get scored."""

import numpy as np

from lanekit import losses as L, metrics
from lanekit.dataset import LaneRecord
from lanekit.geometry import RowAnchorGrid
from lanekit.losses import LossWeights
from lanekit.tensor import F64, Tensor

grid = RowAnchorGrid(160, 90, tuple(range(45, 82, 4)), 50)
M, h, w = 2, grid.h, grid.w

# two straight lanes as one-hot targets
targets = np.zeros((1, M, h), dtype=np.int64)
targets[0, 0] = 12
targets[0, 1] = 35

# a confident model: one-hot logits right on target
sharp = np.zeros((1, M, h, w + 1))
np.put_along_axis(sharp, targets[..., None], 40.0, axis=-1)

# a clueless model: uniform logits everywhere
flat = np.zeros((1, M, h, w + 1))

weights = LossWeights(alpha=0.1, lambda_=0.1, gamma=0.6)
for name, logits in (("confident", sharp), ("uniform", flat)):
    _, parts = L.detection_loss(Tensor(logits, F64), targets, weights, grid)
    cls = L.classification_loss(Tensor(np.zeros((1, M, 2)), F64),
                                np.zeros((1, M), dtype=int), np.ones((1, M)))
    total, report = L.total_loss(parts, cls, weights)
    print(f"{name:>9}: loc {report.loc:8.3f} sim {report.sim:.4f} "
          f"shp {report.shp:.4f} cls {report.classification:.4f} total {report.total:8.3f}")
print(f"uniform loc equals M*h*ln(w+1) = {M * h * np.log(w + 1):.3f}")

# scoring: the 20 px threshold lives at 1280-px width and scales down
hs = list(grid.h_samples)
gt = [LaneRecord("img.ppm", hs, [[40.0] * h, [112.0] * h], classes=[1, 2])]
pred = [LaneRecord("img.ppm", hs, [[41.5] * h, [117.0] * h], classes=[1, 2])]
cfg = metrics.EvalConfig(image_width=grid.image_width)
print(f"\neffective threshold at width {grid.image_width}: "
      f"{cfg.effective_threshold:.2f} px")
det = metrics.detection_accuracy(pred, gt, cfg)
cls = metrics.classification_accuracy(pred, gt, cfg)
print(metrics.render_report(det, [cls], fmt="text"))
