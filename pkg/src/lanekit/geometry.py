"""Row-anchor grid encoding/decoding and spline-based lane resampling.

Lanes are curves x(y). Free-form polyline annotations are fitted with a
natural cubic spline parameterized by y and resampled at the fixed row
anchors (``h_samples``); a horizontal position then becomes one of ``w``
gridding cells, with index ``w`` reserved for "no lane at this anchor".
The absent-point marker in sampled lanes is -2, following the TuSimple
convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ABSENT = -2.0


@dataclass(frozen=True)
class RowAnchorGrid:
    """Discretization contract: image size, row anchors, and gridding cells."""

    image_width: int
    image_height: int
    h_samples: tuple
    w: int

    def __post_init__(self):
        object.__setattr__(self, "h_samples", tuple(int(y) for y in self.h_samples))
        hs = self.h_samples
        if len(hs) == 0:
            raise ValueError("grid needs at least one row anchor")
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ValueError("h_samples must be strictly increasing")
        if hs[0] < 0 or hs[-1] >= self.image_height:
            raise ValueError(f"h_samples must lie within [0, {self.image_height})")
        if self.w < 2:
            raise ValueError("need at least 2 gridding cells")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def h(self) -> int:
        return len(self.h_samples)

    @property
    def background_index(self) -> int:
        return self.w

    @property
    def cell_width(self) -> float:
        return self.image_width / self.w

    def to_dict(self) -> dict:
        return {
            "image_width": self.image_width,
            "image_height": self.image_height,
            "h_samples": list(self.h_samples),
            "w": self.w,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RowAnchorGrid":
        return cls(
            image_width=int(d["image_width"]),
            image_height=int(d["image_height"]),
            h_samples=tuple(d["h_samples"]),
            w=int(d["w"]),
        )


def canonicalize_polyline(points) -> tuple[np.ndarray, np.ndarray]:
    """Sort points by y and average x over duplicate y values.

    Returns (ys, xs) with ys strictly increasing. Fewer than 2 distinct y
    values is an error: no curve can be fitted.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"polyline must be a list of (x, y) points, got shape {pts.shape}")
    xs, ys = pts[:, 0], pts[:, 1]
    uniq, inverse = np.unique(ys, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("polyline needs at least 2 distinct y values")
    mean_x = np.zeros(uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    np.add.at(mean_x, inverse, xs)
    mean_x /= counts
    return uniq, mean_x


@dataclass(frozen=True)
class LaneCurve:
    """Natural cubic spline x(y): zero second derivative at both endpoints."""

    knot_y: np.ndarray
    knot_x: np.ndarray
    second_deriv: np.ndarray = field(repr=False)

    @property
    def y_min(self) -> float:
        return float(self.knot_y[0])

    @property
    def y_max(self) -> float:
        return float(self.knot_y[-1])

    def __call__(self, y):
        """Evaluate x at scalar or array y; no extrapolation guard (see sample_at_anchors)."""
        y = np.asarray(y, dtype=np.float64)
        ky, kx, m = self.knot_y, self.knot_x, self.second_deriv
        i = np.clip(np.searchsorted(ky, y, side="right") - 1, 0, len(ky) - 2)
        h = ky[i + 1] - ky[i]
        a = (ky[i + 1] - y) / h
        b = (y - ky[i]) / h
        return (
            a * kx[i]
            + b * kx[i + 1]
            + ((a**3 - a) * m[i] + (b**3 - b) * m[i + 1]) * (h**2) / 6.0
        )


def fit_spline(points) -> LaneCurve:
    """Fit a natural cubic spline through polyline points, parameterized by y.

    Two distinct points degenerate to the straight segment between them.
    """
    ys, xs = canonicalize_polyline(points)
    n = len(ys)
    m = np.zeros(n)
    if n > 2:
        # Thomas solve of the tridiagonal system for interior second derivatives.
        h = np.diff(ys)
        rhs = 6.0 * np.diff(np.diff(xs) / h)
        diag = 2.0 * (h[:-1] + h[1:])
        lower = h[:-1].copy()
        upper = h[1:].copy()
        cp = np.zeros(n - 2)
        dp = np.zeros(n - 2)
        cp[0] = upper[0] / diag[0]
        dp[0] = rhs[0] / diag[0]
        for k in range(1, n - 2):
            denom = diag[k] - lower[k] * cp[k - 1]
            cp[k] = upper[k] / denom
            dp[k] = (rhs[k] - lower[k] * dp[k - 1]) / denom
        sol = np.zeros(n - 2)
        sol[-1] = dp[-1]
        for k in range(n - 4, -1, -1):
            sol[k] = dp[k] - cp[k] * sol[k + 1]
        m[1:-1] = sol
    return LaneCurve(knot_y=ys, knot_x=xs, second_deriv=m)


def sample_at_anchors(curve: LaneCurve, grid: RowAnchorGrid) -> list[float]:
    """Sample the curve at the grid's row anchors.

    Anchors outside the curve's y-domain get the absent marker -2; inside,
    the x value is clamped to [0, image_width - 1]. No extrapolation.
    """
    ys = np.asarray(grid.h_samples, dtype=np.float64)
    inside = (ys >= curve.y_min) & (ys <= curve.y_max)
    out = np.full(len(ys), ABSENT)
    if inside.any():
        out[inside] = np.clip(curve(ys[inside]), 0.0, grid.image_width - 1)
    return out.tolist()


def encode(lanes_x, grid: RowAnchorGrid, max_lanes: int | None = None) -> np.ndarray:
    """Turn per-lane x lists into a grid-cell target matrix [lanes, h].

    x == -2 maps to the background index; any other x must be >= 0 and maps
    to floor(x / cell_width), clamped so x at the right image edge still
    falls in the last cell. If ``max_lanes`` is given the result is padded
    with all-background rows up to that count.
    """
    h = grid.h
    rows = []
    for li, xs in enumerate(lanes_x):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape != (h,):
            raise ValueError(f"lane {li}: expected {h} x values, got {xs.shape}")
        absent = xs == ABSENT
        if np.any(~absent & (xs < 0)):
            raise ValueError(f"lane {li}: negative x other than the -2 marker")
        cells = np.full(h, grid.background_index, dtype=np.int64)
        cells[~absent] = np.clip(
            np.floor(xs[~absent] / grid.cell_width).astype(np.int64), 0, grid.w - 1
        )
        rows.append(cells)
    if max_lanes is not None:
        if len(rows) > max_lanes:
            raise ValueError(f"{len(rows)} lanes exceed the {max_lanes}-lane budget")
        while len(rows) < max_lanes:
            rows.append(np.full(h, grid.background_index, dtype=np.int64))
    if not rows:
        return np.zeros((0, h), dtype=np.int64)
    return np.stack(rows)


def decode(det_logits: np.ndarray, grid: RowAnchorGrid) -> list[list[float]]:
    """Turn detection logits [M, h, w+1] back into per-lane x lists.

    Presence is decided by the argmax over all w+1 entries; located anchors
    take the expected cell index under the softmax restricted to the first
    w cells, mapped to the cell-center x and clamped to image bounds.
    """
    logits = np.asarray(det_logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[1] != grid.h or logits.shape[2] != grid.w + 1:
        raise ValueError(
            f"decode: logits shape {logits.shape} does not match grid "
            f"[M, {grid.h}, {grid.w + 1}]"
        )
    background = logits.argmax(axis=-1) == grid.background_index
    loc = logits[:, :, : grid.w]
    z = loc - loc.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    expect = p @ np.arange(grid.w)
    x = np.clip((expect + 0.5) * grid.cell_width, 0.0, grid.image_width - 1)
    x[background] = ABSENT
    return [row.tolist() for row in x]


def expected_locations(det_logits: np.ndarray, grid: RowAnchorGrid) -> np.ndarray:
    """Expected cell index per (lane, anchor), ignoring the background cell."""
    logits = np.asarray(det_logits, dtype=np.float64)
    loc = logits[..., : grid.w]
    z = loc - loc.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return p @ np.arange(grid.w)


def transform_record(affine, record, grid: RowAnchorGrid):
    """Map a record's lane points through a 2x3 affine and resample.

    Each lane's surviving in-image points are refitted with a spline and
    resampled at the record's own h_samples; positions that leave the image
    (or fall outside the refitted domain) become -2. A lane left with fewer
    than 2 points becomes all-background. When the affine reverses
    orientation (horizontal flip), lane order and classes are reversed so
    lanes stay sorted left to right.
    """
    from .dataset import LaneRecord  # record type lives with the IO layer

    a = np.asarray(affine, dtype=np.float64)
    if a.shape != (2, 3):
        raise ValueError(f"affine must be 2x3, got {a.shape}")
    if abs(np.linalg.det(a[:, :2])) < 1e-12:
        raise ValueError("affine is not invertible")
    flip = np.linalg.det(a[:, :2]) < 0

    hs = np.asarray(record.h_samples, dtype=np.float64)
    out_lanes = []
    for xs in record.lanes:
        xs = np.asarray(xs, dtype=np.float64)
        keep = xs != ABSENT
        pts = np.stack([xs[keep], hs[keep]], axis=1)
        if len(pts) >= 2:
            mapped = pts @ a[:, :2].T + a[:, 2]
            in_img = (
                (mapped[:, 0] >= 0)
                & (mapped[:, 0] < grid.image_width)
                & (mapped[:, 1] >= 0)
                & (mapped[:, 1] < grid.image_height)
            )
            mapped = mapped[in_img]
        else:
            mapped = np.zeros((0, 2))
        new_xs = np.full(len(hs), ABSENT)
        if len(mapped) >= 2 and len(np.unique(mapped[:, 1])) >= 2:
            curve = fit_spline(mapped)
            inside = (hs >= curve.y_min) & (hs <= curve.y_max)
            if inside.any():
                vals = curve(hs[inside])
                ok = (vals >= 0) & (vals < grid.image_width)
                picked = np.full(inside.sum(), ABSENT)
                picked[ok] = vals[ok]
                new_xs[inside] = picked
        out_lanes.append(new_xs.tolist())

    classes = list(record.classes) if record.classes is not None else None
    if flip:
        out_lanes.reverse()
        if classes is not None:
            classes.reverse()
    return LaneRecord(
        raw_file=record.raw_file,
        h_samples=list(record.h_samples),
        lanes=out_lanes,
        classes=classes,
    )


def flip_affine(image_width: int) -> np.ndarray:
    """Horizontal mirror: x -> width - 1 - x."""
    return np.array([[-1.0, 0.0, image_width - 1.0], [0.0, 1.0, 0.0]])


def rotation_affine(degrees: float, center) -> np.ndarray:
    cx, cy = center
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy]])


def scale_affine(factor: float, center) -> np.ndarray:
    cx, cy = center
    return np.array([[factor, 0.0, cx * (1 - factor)], [0.0, factor, cy * (1 - factor)]])


def translation_affine(dx: float, dy: float) -> np.ndarray:
    return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]])


def compose_affines(*affines) -> np.ndarray:
    """Compose 2x3 affines; the first argument is applied first."""
    out = np.eye(3)
    for a in affines:
        m = np.eye(3)
        m[:2, :] = np.asarray(a, dtype=np.float64)
        out = m @ out
    return out[:2, :]
