"""Synthetic road scenes with exact lane ground truth.

Desk-scale stand-in for dashcam data: each image is a dark road surface
with a horizon band and 1..M lane markings rendered by class style (solid
stripe, dash pattern, double line, Botts' dots, edge band). The marking
centerline is an analytic curve, so the emitted records are exact at the
requested row anchors by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ClassId, LaneRecord, write_dataset, write_ppm
from .geometry import ABSENT

ROAD_COLOR = (52, 52, 56)
SKY_COLOR = (96, 118, 142)
WHITE = (232, 232, 226)
YELLOW = (214, 182, 70)
EDGE_GRAY = (140, 134, 126)


def _default_h_samples(height: int) -> tuple:
    start = int(round(0.45 * height))
    step = max(2, height // 24)
    return tuple(range(start, height - 3, step))


@dataclass(frozen=True)
class SynthSpec:
    """Everything the generator needs; identical specs produce identical bytes."""

    count: int
    width: int = 320
    height: int = 180
    lanes_range: tuple = (2, 4)
    curvature_range: tuple = (-0.0012, 0.0012)
    slope_range: tuple = (-0.25, 0.25)
    x_jitter: float = 12.0
    class_probs: dict = field(
        default_factory=lambda: {int(ClassId.SOLID_WHITE): 0.5, int(ClassId.DASHED): 0.5}
    )
    noise_level: float = 0.02
    horizon: float = 0.35
    h_samples: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("image count must be >= 0")
        if not self.h_samples:
            object.__setattr__(self, "h_samples", _default_h_samples(self.height))
        object.__setattr__(self, "h_samples", tuple(int(y) for y in self.h_samples))
        lo, hi = self.lanes_range
        if not 1 <= lo <= hi <= 6:
            raise ValueError("lanes_range must satisfy 1 <= lo <= hi <= 6")
        total = sum(self.class_probs.values())
        if not self.class_probs or abs(total - 1.0) > 1e-9:
            raise ValueError("class_probs must sum to 1")
        for cid in self.class_probs:
            if not 0 <= int(cid) <= 6:
                raise ValueError(f"class id {cid} outside [0, 6]")

    @property
    def stripe_px(self) -> int:
        return max(2, self.width // 160)

    @property
    def dash_period(self) -> int:
        # projected real-world dashes span a large fraction of image height
        return max(6, self.height // 6)

    @property
    def dot_period(self) -> int:
        return max(4, self.height // 12)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "width": self.width,
            "height": self.height,
            "lanes_range": list(self.lanes_range),
            "curvature_range": list(self.curvature_range),
            "slope_range": list(self.slope_range),
            "x_jitter": self.x_jitter,
            "class_probs": {str(k): v for k, v in self.class_probs.items()},
            "noise_level": self.noise_level,
            "horizon": self.horizon,
            "h_samples": list(self.h_samples),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class _Lane:
    x_bottom: float
    slope: float
    curvature: float
    class_id: int

    def x_at(self, y: np.ndarray, height: int) -> np.ndarray:
        dy = np.asarray(y, dtype=np.float64) - (height - 1)
        return self.x_bottom + self.slope * dy + self.curvature * dy * dy


def _sample_lanes(spec: SynthSpec, rng: np.random.Generator) -> list:
    """One entry per lane slot: a _Lane for occupied zones, None elsewhere.

    Lane positions are anchored to fixed zones across the dataset (zone z
    centered at width*(z+1)/(Z+1)), mirroring the TuSimple convention of
    padding records to a fixed lane list where absent lanes are all -2.
    """
    n_zones = spec.lanes_range[1]
    k = int(rng.integers(spec.lanes_range[0], spec.lanes_range[1] + 1))
    occupied = sorted(rng.choice(n_zones, size=k, replace=False).tolist())
    ids = sorted(spec.class_probs)
    probs = np.array([spec.class_probs[c] for c in ids], dtype=np.float64)
    # lanes on one road share a direction and curvature, with small
    # per-lane deviations
    road_slope = rng.uniform(*spec.slope_range)
    road_curv = rng.uniform(*spec.curvature_range)
    slope_dev = 0.1 * (spec.slope_range[1] - spec.slope_range[0]) / 2.0
    slots = []
    for z in range(n_zones):
        if z not in occupied:
            slots.append(None)
            continue
        base = spec.width * (z + 1) / (n_zones + 1)
        xb = base + rng.uniform(-spec.x_jitter, spec.x_jitter)
        slope = road_slope + rng.uniform(-slope_dev, slope_dev)
        cid = int(ids[rng.choice(len(ids), p=probs)])
        slots.append(_Lane(x_bottom=xb, slope=slope, curvature=road_curv, class_id=cid))
    return slots


def _pattern_on(cid: int, y: int, spec: SynthSpec) -> bool:
    if cid in (ClassId.SOLID_WHITE, ClassId.SOLID_YELLOW, ClassId.DOUBLE_YELLOW,
               ClassId.ROAD_EDGE_UNKNOWN):
        return True
    if cid in (ClassId.DASHED, ClassId.DOUBLE_DASHED):
        return (y // spec.dash_period) % 2 == 0
    if cid == ClassId.BOTTS_DOTS:
        return y % spec.dot_period < max(2, spec.stripe_px)
    raise ValueError(f"no render style for class {cid}")


def _class_color(cid: int) -> tuple:
    if cid in (ClassId.SOLID_YELLOW, ClassId.DOUBLE_YELLOW):
        return YELLOW
    if cid == ClassId.ROAD_EDGE_UNKNOWN:
        return EDGE_GRAY
    return WHITE


def _paint_span(img: np.ndarray, y: int, xc: float, half: float, color) -> None:
    w = img.shape[1]
    lo = int(np.floor(xc - half))
    hi = int(np.ceil(xc + half))
    lo, hi = max(0, lo), min(w, hi + 1)
    if lo < hi:
        img[y, lo:hi] = color


def render_scene(spec: SynthSpec, rng: np.random.Generator):
    """Render one image and its exact record; the caller owns file naming."""
    h, w = spec.height, spec.width
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = ROAD_COLOR
    y_top = int(round(spec.horizon * h))
    img[:y_top] = SKY_COLOR
    # soft horizon band so the boundary is not a single hard edge
    for i, y in enumerate(range(y_top, min(y_top + 4, h))):
        t = (i + 1) / 5.0
        img[y] = np.array(SKY_COLOR) * (1 - t) + np.array(ROAD_COLOR) * t

    slots = _sample_lanes(spec, rng)
    double_off = max(2.0, spec.stripe_px * 1.5)
    for lane in slots:
        if lane is None:
            continue
        color = _class_color(lane.class_id)
        for y in range(y_top, h):
            if not _pattern_on(lane.class_id, y, spec):
                continue
            xc = float(lane.x_at(y, h))
            if xc < -spec.stripe_px * 2 or xc > w + spec.stripe_px * 2:
                continue
            half = spec.stripe_px / 2.0
            if lane.class_id in (ClassId.DOUBLE_YELLOW, ClassId.DOUBLE_DASHED):
                _paint_span(img, y, xc - double_off, half, color)
                _paint_span(img, y, xc + double_off, half, color)
            elif lane.class_id == ClassId.BOTTS_DOTS:
                _paint_span(img, y, xc, half + 1.0, color)
            else:
                _paint_span(img, y, xc, half, color)

    if spec.noise_level > 0:
        img += rng.normal(0.0, spec.noise_level * 255.0, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    ys = np.asarray(spec.h_samples, dtype=np.float64)
    lane_rows = []
    classes = []
    for lane in slots:
        if lane is None:
            # empty slot, padded the TuSimple way: every anchor absent
            lane_rows.append([ABSENT] * len(ys))
            classes.append(0)
            continue
        xs = lane.x_at(ys, h)
        visible = (ys >= y_top) & (xs >= 0) & (xs < w)
        row = np.full(len(ys), ABSENT)
        row[visible] = xs[visible]
        lane_rows.append([round(float(v), 3) for v in row])
        classes.append(lane.class_id)
    record = LaneRecord(raw_file="", h_samples=list(spec.h_samples),
                        lanes=lane_rows, classes=classes)
    return img, record


def generate_synthetic(spec: SynthSpec, out_dir) -> list[LaneRecord]:
    """Write ``count`` PPM images plus a labels.jsonl file; returns the records."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(spec.count):
        rng = np.random.Generator(np.random.PCG64(spec.seed * 1_000_003 + i))
        img, rec = render_scene(spec, rng)
        rec.raw_file = f"images/{i:05d}.ppm"
        write_ppm(out / rec.raw_file, img)
        records.append(rec)
    write_dataset(records, out / "labels.jsonl")
    return records
