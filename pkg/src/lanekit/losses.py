"""Training objectives: localization, structural, classification, total.

The localization loss sums a per-anchor cross entropy over lane slots and
row anchors. Two structural terms encode lane priors: adjacent row anchors
should carry similar location distributions (similarity), and expected
locations should be close to straight (shape, a second-order difference).
The detection loss is ``loc + alpha * sim + lambda * shp`` and the total
adds ``gamma`` times the per-lane classification cross entropy. All batch
reductions are means so magnitudes do not depend on batch size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import RowAnchorGrid
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    """Similarity weight alpha, shape weight lambda, classification weight gamma."""

    alpha: float = 1.0
    lambda_: float = 1.0
    gamma: float = 0.6

    def __post_init__(self):
        for name in ("alpha", "lambda_", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "lambda": self.lambda_, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(
            alpha=float(d.get("alpha", 1.0)),
            lambda_=float(d.get("lambda", 1.0)),
            gamma=float(d.get("gamma", 0.6)),
        )


@dataclass
class LossReport:
    loc: float
    sim: float
    shp: float
    detection: float
    classification: float
    total: float

    def to_json(self, step: int | None = None) -> str:
        obj = {}
        if step is not None:
            obj["step"] = step
        obj.update(
            loc=self.loc, sim=self.sim, shp=self.shp,
            detection=self.detection, classification=self.classification,
            total=self.total,
        )
        return json.dumps(obj, separators=(",", ":"))


def _check_det_shape(det_logits: Tensor, targets=None):
    if det_logits.data.ndim != 4:
        raise ValueError(f"det_logits must be [batch, M, h, w+1], got {det_logits.shape}")
    if targets is not None:
        t = np.asarray(targets)
        if t.shape != det_logits.shape[:3]:
            raise ValueError(
                f"targets shape {t.shape} does not match logits {det_logits.shape[:3]}"
            )


def loc_loss(det_logits: Tensor, targets) -> Tensor:
    """Cross entropy summed over lanes and anchors, averaged over the batch."""
    _check_det_shape(det_logits, targets)
    t = np.asarray(targets, dtype=np.int64)
    n_cells = det_logits.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= n_cells):
        raise ValueError(f"targets must lie in [0, {n_cells - 1}]")
    batch = det_logits.shape[0]
    ce = T.cross_entropy_with_logits(det_logits, t, axis=-1)
    return ce.sum() * (1.0 / batch)


def sim_loss(det_logits: Tensor) -> Tensor:
    """Mean L1 distance between the softmaxed vectors of adjacent anchors."""
    _check_det_shape(det_logits)
    h = det_logits.shape[2]
    if h < 2:
        raise ValueError("similarity loss needs at least 2 row anchors")
    p = T.softmax(det_logits, axis=-1)
    upper = T.slice_axis(p, 2, 0, h - 1)
    lower = T.slice_axis(p, 2, 1, h)
    return (upper - lower).abs().sum(axis=3).mean()


def shp_loss(det_logits: Tensor, grid: RowAnchorGrid) -> Tensor:
    """Mean absolute second difference of expected locations down the anchors."""
    _check_det_shape(det_logits)
    h = det_logits.shape[2]
    if h < 3:
        raise ValueError("shape loss needs at least 3 row anchors")
    if det_logits.shape[-1] != grid.w + 1:
        raise ValueError(
            f"logits have {det_logits.shape[-1]} cells but grid expects {grid.w + 1}"
        )
    loc_logits = T.slice_axis(det_logits, 3, 0, grid.w)
    p = T.softmax(loc_logits, axis=-1)
    index = Tensor(np.arange(grid.w, dtype=np.float64), dtype=det_logits.dtype)
    loc = (p * index).sum(axis=3)  # [batch, M, h]
    d1 = T.slice_axis(loc, 2, 0, h - 1) - T.slice_axis(loc, 2, 1, h)
    d2 = T.slice_axis(d1, 2, 0, h - 2) - T.slice_axis(d1, 2, 1, h - 1)
    return d2.abs().mean()


def detection_loss(det_logits: Tensor, targets, weights: LossWeights, grid: RowAnchorGrid):
    """Weighted sum of localization and the two structural terms.

    Returns (total tensor, dict of the component tensors).
    """
    loc = loc_loss(det_logits, targets)
    sim = sim_loss(det_logits)
    shp = shp_loss(det_logits, grid)
    total = loc + weights.alpha * sim + weights.lambda_ * shp
    return total, {"loc": loc, "sim": sim, "shp": shp, "detection": total}


def classification_loss(cls_logits: Tensor, class_targets, lane_mask) -> Tensor:
    """Mean cross entropy over real lane slots; zero when the mask is empty."""
    if cls_logits.data.ndim != 3:
        raise ValueError(f"cls_logits must be [batch, M, C], got {cls_logits.shape}")
    t = np.asarray(class_targets, dtype=np.int64)
    mask = np.asarray(lane_mask, dtype=np.float64)
    if t.shape != cls_logits.shape[:2] or mask.shape != t.shape:
        raise ValueError(
            f"class targets {t.shape} and mask {mask.shape} must both match "
            f"logits {cls_logits.shape[:2]}"
        )
    n_classes = cls_logits.shape[-1]
    live = mask > 0
    if live.any() and (t[live].min() < 0 or t[live].max() >= n_classes):
        raise ValueError(f"class targets must lie in [0, {n_classes - 1}]")
    n_real = float(mask.sum())
    if n_real == 0:
        return Tensor(0.0, dtype=cls_logits.dtype)
    safe_t = np.where(live, t, 0)
    ce = T.cross_entropy_with_logits(cls_logits, safe_t, axis=-1)
    mask_t = Tensor(mask, dtype=cls_logits.dtype)
    return (ce * mask_t).sum() * (1.0 / n_real)


def total_loss(detection_parts: dict, classification: Tensor, weights: LossWeights):
    """Detection plus gamma-weighted classification; returns (tensor, LossReport)."""
    det = detection_parts["detection"]
    total = det + weights.gamma * classification
    report = LossReport(
        loc=detection_parts["loc"].item(),
        sim=detection_parts["sim"].item(),
        shp=detection_parts["shp"].item(),
        detection=det.item(),
        classification=classification.item(),
        total=total.item(),
    )
    return total, report


def compute_losses(det_logits: Tensor, cls_logits: Tensor, targets, class_targets,
                   lane_mask, weights: LossWeights, grid: RowAnchorGrid):
    """One-call path used by the trainer: returns (total tensor, LossReport)."""
    _, det_parts = detection_loss(det_logits, targets, weights, grid)
    cls = classification_loss(cls_logits, class_targets, lane_mask)
    return total_loss(det_parts, cls, weights)
