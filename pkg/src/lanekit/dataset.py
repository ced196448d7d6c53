"""TuSimple-style JSON-lines datasets extended with lane classes.

One JSON object per line with keys ``lanes``, ``h_samples``, ``raw_file``
and, when lane types are annotated, ``classes`` (integers 0-6). Class
mapping schemes, label-consistent augmentation, and the binary PPM image
format used by the synthetic generator live here too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import ABSENT, RowAnchorGrid

MAX_LANES = 6


class ClassId(IntEnum):
    SOLID_YELLOW = 0
    SOLID_WHITE = 1
    DASHED = 2
    DOUBLE_DASHED = 3
    BOTTS_DOTS = 4
    DOUBLE_YELLOW = 5
    ROAD_EDGE_UNKNOWN = 6


CLASS_NAMES = {
    ClassId.SOLID_YELLOW: "solid-yellow",
    ClassId.SOLID_WHITE: "solid-white",
    ClassId.DASHED: "dashed",
    ClassId.DOUBLE_DASHED: "double-dashed",
    ClassId.BOTTS_DOTS: "botts-dots",
    ClassId.DOUBLE_YELLOW: "double-yellow",
    ClassId.ROAD_EDGE_UNKNOWN: "road-edge-unknown",
}


@dataclass(frozen=True)
class ClassScheme:
    """Total mapping from the 7 base classes onto a smaller class set.

    Scheme ids are canonical representatives chosen from the base ids, which
    makes the mapping idempotent: re-mapping an already-mapped record is a
    no-op. ``compact`` turns a (base or scheme) id into a dense 0..C-1 index
    for training targets and confusion matrices.
    """

    name: str
    mapping: tuple
    labels: dict

    @property
    def class_ids(self) -> tuple:
        return tuple(sorted(set(self.mapping)))

    @property
    def class_count(self) -> int:
        return len(self.class_ids)

    def apply(self, base_id: int) -> int:
        if not 0 <= base_id <= 6:
            raise ValueError(f"class id {base_id} outside [0, 6]")
        return self.mapping[base_id]

    def compact(self, class_id: int) -> int:
        return self.class_ids.index(self.apply(class_id))

    def id_of_compact(self, index: int) -> int:
        return self.class_ids[index]

    def label(self, class_id: int) -> str:
        return self.labels[self.apply(class_id)]


SEVEN = ClassScheme(
    name="SEVEN",
    mapping=(0, 1, 2, 3, 4, 5, 6),
    labels={int(c): CLASS_NAMES[c] for c in ClassId},
)

# double-dashed folds into dashed; everything else keeps its own identity
SIX = ClassScheme(
    name="SIX",
    mapping=(0, 1, 2, 2, 4, 5, 6),
    labels={int(c): CLASS_NAMES[c] for c in ClassId if c != ClassId.DOUBLE_DASHED},
)

# solid: solid-white, solid-yellow, double-yellow, road edges;
# dashed: dashed, double-dashed, Botts' dots
TWO = ClassScheme(
    name="TWO",
    mapping=(0, 0, 2, 2, 2, 0, 0),
    labels={0: "solid", 2: "dashed"},
)

_SCHEMES = {"seven": SEVEN, "six": SIX, "two": TWO}


def get_scheme(name) -> ClassScheme:
    if isinstance(name, ClassScheme):
        return name
    try:
        return _SCHEMES[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown class scheme {name!r}; expected two, six, or seven")


@dataclass
class LaneRecord:
    """One image's ground truth: anchors, per-lane x lists, optional classes."""

    raw_file: str
    h_samples: list
    lanes: list
    classes: list | None = None

    def validate(self, where: str = "record") -> "LaneRecord":
        if not isinstance(self.raw_file, str) or not self.raw_file:
            raise ValueError(f"{where}: raw_file must be a non-empty string")
        h = len(self.h_samples)
        if len(self.lanes) > MAX_LANES:
            raise ValueError(f"{where}: {len(self.lanes)} lanes exceed the maximum of {MAX_LANES}")
        for i, lane in enumerate(self.lanes):
            if len(lane) != h:
                raise ValueError(
                    f"{where}: lane {i} has {len(lane)} points but h_samples has {h}"
                )
        if self.classes is not None:
            if len(self.classes) != len(self.lanes):
                raise ValueError(
                    f"{where}: {len(self.classes)} classes for {len(self.lanes)} lanes"
                )
            for c in self.classes:
                if not 0 <= int(c) <= 6:
                    raise ValueError(f"{where}: class id {c} outside [0, 6]")
        return self

    def real_lane_indices(self) -> list:
        """Lanes that have at least one non-absent point."""
        return [i for i, lane in enumerate(self.lanes) if any(x != ABSENT for x in lane)]


def _num(v):
    f = float(v)
    return int(f) if f.is_integer() else f


def record_from_json(obj: dict, where: str = "record") -> LaneRecord:
    for key in ("raw_file", "h_samples", "lanes"):
        if key not in obj:
            raise ValueError(f"{where}: missing required key {key!r}")
    classes = obj.get("classes")
    rec = LaneRecord(
        raw_file=obj["raw_file"],
        h_samples=[int(y) for y in obj["h_samples"]],
        lanes=[[_num(x) for x in lane] for lane in obj["lanes"]],
        classes=None if classes is None else [int(c) for c in classes],
    )
    return rec.validate(where)


def record_to_json(rec: LaneRecord) -> dict:
    obj = {
        "lanes": [[_num(x) for x in lane] for lane in rec.lanes],
        "h_samples": [int(y) for y in rec.h_samples],
        "raw_file": rec.raw_file,
    }
    if rec.classes is not None:
        obj["classes"] = [int(c) for c in rec.classes]
    return obj


def read_dataset(path) -> list[LaneRecord]:
    """Read a JSON-lines dataset; blank lines are skipped, bad lines name themselves."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {lineno}: malformed JSON ({e.msg})") from None
            records.append(record_from_json(obj, where=f"{path}: line {lineno}"))
    return records


def write_dataset(records, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                rec.validate()
                fh.write(json.dumps(record_to_json(rec), separators=(",", ":")))
                fh.write("\n")
    except OSError as e:
        raise OSError(f"cannot write dataset to {path}: {e}") from None


def map_classes(rec: LaneRecord, scheme) -> LaneRecord:
    """Replace each lane class by its scheme representative; geometry untouched."""
    scheme = get_scheme(scheme)
    if rec.classes is None:
        raise ValueError(f"record {rec.raw_file!r} has no classes to map")
    return LaneRecord(
        raw_file=rec.raw_file,
        h_samples=list(rec.h_samples),
        lanes=[list(lane) for lane in rec.lanes],
        classes=[scheme.apply(int(c)) for c in rec.classes],
    )


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    """Transform magnitudes and per-transform probabilities.

    Defaults keep most of the lane extent in frame at 1280x720; scale the
    translation limits along with the image size.
    """

    rotation_deg: float = 6.0
    rotation_prob: float = 0.5
    flip_prob: float = 0.5
    scale_range: tuple = (0.9, 1.1)
    scale_prob: float = 0.5
    translate_x: float = 60.0
    translate_y: float = 20.0
    translate_prob: float = 0.5

    @classmethod
    def disabled(cls) -> "AugmentParams":
        return cls(rotation_prob=0.0, flip_prob=0.0, scale_prob=0.0, translate_prob=0.0)


def sample_affine(params: AugmentParams, grid: RowAnchorGrid, seed: int) -> np.ndarray:
    """Draw one affine from the parameter ranges, deterministically from the seed.

    All random draws happen unconditionally so the sampled affine depends
    only on the seed, not on which transforms fire.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    gates = rng.random(4)
    angle = rng.uniform(-params.rotation_deg, params.rotation_deg)
    scale = rng.uniform(*params.scale_range)
    dx = rng.uniform(-params.translate_x, params.translate_x)
    dy = rng.uniform(-params.translate_y, params.translate_y)
    center = ((grid.image_width - 1) / 2.0, (grid.image_height - 1) / 2.0)

    parts = []
    if gates[0] < params.flip_prob:
        parts.append(geometry.flip_affine(grid.image_width))
    if gates[1] < params.rotation_prob:
        parts.append(geometry.rotation_affine(angle, center))
    if gates[2] < params.scale_prob:
        parts.append(geometry.scale_affine(scale, center))
    if gates[3] < params.translate_prob:
        parts.append(geometry.translation_affine(dx, dy))
    if not parts:
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return geometry.compose_affines(*parts)


def warp_image(image: np.ndarray, affine: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Apply a forward affine to an HWC float image with bilinear sampling."""
    a = np.asarray(affine, dtype=np.float64)
    m = np.eye(3)
    m[:2, :] = a
    inv = np.linalg.inv(m)[:2, :]
    h, w = image.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = (src_x - x0).astype(image.dtype)
    fy = (src_y - y0).astype(image.dtype)

    def grab(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out = np.full(image.shape, fill, dtype=image.dtype)
        out[valid] = image[yy[valid], xx[valid]]
        return out, valid

    p00, _ = grab(y0, x0)
    p01, _ = grab(y0, x0 + 1)
    p10, _ = grab(y0 + 1, x0)
    p11, _ = grab(y0 + 1, x0 + 1)
    fx = fx[..., None] if image.ndim == 3 else fx
    fy = fy[..., None] if image.ndim == 3 else fy
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype)


def augment(rec: LaneRecord, image: np.ndarray, params: AugmentParams, seed: int,
            grid: RowAnchorGrid | None = None):
    """Apply one seeded affine to the image and, through the same matrix, the labels."""
    if grid is None:
        grid = RowAnchorGrid(
            image_width=image.shape[1],
            image_height=image.shape[0],
            h_samples=tuple(rec.h_samples),
            w=2,
        )
    affine = sample_affine(params, grid, seed)
    new_rec = geometry.transform_record(affine, rec, grid)
    new_img = warp_image(image, affine)
    return new_img, new_rec


# ---------------------------------------------------------------------------
# binary PPM (P6), the raster format of the synthetic generator


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("write_ppm expects an HWC uint8 RGB image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def image_to_float(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float32) / 255.0


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
