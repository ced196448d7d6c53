"""Detection and classification accuracy over TuSimple-style records.

A ground-truth point counts as correct when its matched lane predicts a
point at the same anchor within the pixel threshold. Lane correspondence
is a one-to-one partial assignment maximizing the total correct-point
count: greedy by default, exhaustive as a cross-check for small lane
counts. Accuracies are accumulated over all images and divided once
(micro averaging); a per-image macro average is available behind a flag.

Frozen conventions the underlying formulas leave open: the threshold is
20 px at a 1280-px image width and scales proportionally with width;
unmatched ground-truth lanes stay in every denominator; classification
compares scheme-mapped classes over matched pairs only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import get_scheme
from .geometry import ABSENT

REFERENCE_WIDTH = 1280.0


@dataclass(frozen=True)
class EvalConfig:
    pixel_threshold: float = 20.0
    image_width: int = 1280
    matching: str = "greedy"
    scheme: str = "two"
    macro: bool = False

    def __post_init__(self):
        if self.pixel_threshold <= 0:
            raise ValueError("pixel_threshold must be positive")
        if self.matching not in ("greedy", "exhaustive"):
            raise ValueError(f"matching must be greedy or exhaustive, got {self.matching!r}")

    @property
    def effective_threshold(self) -> float:
        return self.pixel_threshold * self.image_width / REFERENCE_WIDTH


@dataclass
class DetectionScore:
    correct_points: int
    total_points: int
    accuracy: float
    macro_accuracy: float | None = None


@dataclass
class ClassificationScore:
    scheme: str
    true_positives: int
    total: int
    accuracy: float | None
    confusion: np.ndarray  # [C, C], rows ground truth, columns prediction


def pair_score(pred_xs, gt_xs, threshold: float) -> int:
    """Correct-point count between one predicted and one ground-truth lane."""
    if len(pred_xs) != len(gt_xs):
        raise ValueError("lanes sampled at different anchor counts cannot be compared")
    n = 0
    for p, g in zip(pred_xs, gt_xs):
        if g != ABSENT and p != ABSENT and abs(p - g) <= threshold:
            n += 1
    return n


def _score_matrix(pred_lanes, gt_lanes, threshold: float) -> np.ndarray:
    m = np.zeros((len(gt_lanes), len(pred_lanes)), dtype=np.int64)
    for gi, g in enumerate(gt_lanes):
        for pi, p in enumerate(pred_lanes):
            m[gi, pi] = pair_score(p, g, threshold)
    return m


def _greedy_assign(scores: np.ndarray) -> dict:
    assign = {}
    used = set()
    remaining = set(range(scores.shape[0]))
    while remaining:
        best = None
        for gi in sorted(remaining):
            for pi in range(scores.shape[1]):
                if pi in used or scores[gi, pi] <= 0:
                    continue
                key = (scores[gi, pi], -gi, -pi)
                if best is None or key > best[0]:
                    best = (key, gi, pi)
        if best is None:
            break
        _, gi, pi = best
        assign[gi] = pi
        used.add(pi)
        remaining.discard(gi)
    return assign


def _exhaustive_assign(scores: np.ndarray) -> dict:
    n_gt, n_pred = scores.shape
    best_total = -1
    best_assign: dict = {}

    def recurse(gi, used, assign, total):
        nonlocal best_total, best_assign
        if gi == n_gt:
            if total > best_total:
                best_total = total
                best_assign = dict(assign)
            return
        recurse(gi + 1, used, assign, total)  # leave this lane unmatched
        for pi in range(n_pred):
            if pi in used or scores[gi, pi] <= 0:
                continue
            assign[gi] = pi
            recurse(gi + 1, used | {pi}, assign, total + scores[gi, pi])
            del assign[gi]

    recurse(0, frozenset(), {}, 0)
    return best_assign


def match_lanes(pred_lanes, gt_lanes, cfg: EvalConfig) -> dict:
    """One-to-one partial assignment gt index -> pred index.

    Only pairs with a positive correct-point count are matched. Greedy mode
    picks the best remaining pair repeatedly (ties: lowest gt index, then
    lowest pred index); exhaustive mode maximizes the summed score and is
    limited to 6 lanes per side.
    """
    scores = _score_matrix(pred_lanes, gt_lanes, cfg.effective_threshold)
    if cfg.matching == "exhaustive":
        if scores.shape[0] > 6 or scores.shape[1] > 6:
            raise ValueError("exhaustive matching supports at most 6 lanes per side")
        return _exhaustive_assign(scores)
    return _greedy_assign(scores)


def assignment_score(assign: dict, scores: np.ndarray) -> int:
    return int(sum(scores[gi, pi] for gi, pi in assign.items()))


def _index_by_file(records, side: str) -> dict:
    out = {}
    for rec in records:
        if rec.raw_file in out:
            raise ValueError(f"duplicate raw_file {rec.raw_file!r} in {side} dataset")
        out[rec.raw_file] = rec
    return out


def detection_accuracy(pred_records, gt_records, cfg: EvalConfig = EvalConfig()) -> DetectionScore:
    """Correct points over ground-truth points, accumulated then divided once.

    Images missing from the predictions count as all-incorrect; unmatched
    ground-truth lanes contribute only to the denominator.
    """
    preds = _index_by_file(pred_records, "prediction")
    _index_by_file(gt_records, "ground truth")
    correct = 0
    total = 0
    per_image = []
    thr = cfg.effective_threshold
    for gt in gt_records:
        s_img = sum(1 for lane in gt.lanes for x in lane if x != ABSENT)
        c_img = 0
        pred = preds.get(gt.raw_file)
        if pred is not None and s_img > 0 and pred.lanes:
            if list(pred.h_samples) != list(gt.h_samples):
                raise ValueError(
                    f"{gt.raw_file!r}: prediction and ground truth use different h_samples"
                )
            scores = _score_matrix(pred.lanes, gt.lanes, thr)
            if cfg.matching == "exhaustive":
                if scores.shape[0] > 6 or scores.shape[1] > 6:
                    raise ValueError("exhaustive matching supports at most 6 lanes per side")
                assign = _exhaustive_assign(scores)
            else:
                assign = _greedy_assign(scores)
            c_img = assignment_score(assign, scores)
        correct += c_img
        total += s_img
        if s_img > 0:
            per_image.append(c_img / s_img)
    accuracy = correct / total if total else 0.0
    macro = float(np.mean(per_image)) if (cfg.macro and per_image) else None
    return DetectionScore(correct_points=correct, total_points=total,
                          accuracy=accuracy, macro_accuracy=macro)


def classification_accuracy(pred_records, gt_records, cfg: EvalConfig = EvalConfig()) -> ClassificationScore:
    """Scheme-mapped class agreement over matched lane pairs.

    The denominator is every ground-truth lane with at least one real
    point, matched or not.
    """
    scheme = get_scheme(cfg.scheme)
    preds = _index_by_file(pred_records, "prediction")
    _index_by_file(gt_records, "ground truth")
    n = scheme.class_count
    confusion = np.zeros((n, n), dtype=np.int64)
    tp = 0
    total = 0
    thr = cfg.effective_threshold
    for gt in gt_records:
        if gt.classes is None:
            raise ValueError(f"{gt.raw_file!r}: ground truth has no classes")
        real = gt.real_lane_indices()
        total += len(real)
        pred = preds.get(gt.raw_file)
        if pred is None or not pred.lanes or not real:
            continue
        if pred.classes is None:
            raise ValueError(f"{gt.raw_file!r}: prediction has no classes")
        if list(pred.h_samples) != list(gt.h_samples):
            raise ValueError(
                f"{gt.raw_file!r}: prediction and ground truth use different h_samples"
            )
        assign = match_lanes(pred.lanes, gt.lanes, cfg)
        for gi, pi in assign.items():
            g_compact = scheme.compact(int(gt.classes[gi]))
            p_compact = scheme.compact(int(pred.classes[pi]))
            confusion[g_compact, p_compact] += 1
            if g_compact == p_compact:
                tp += 1
    accuracy = tp / total if total else None
    return ClassificationScore(scheme=scheme.name, true_positives=tp, total=total,
                               accuracy=accuracy, confusion=confusion)


# ---------------------------------------------------------------------------
# reporting


def report_dict(detection: DetectionScore | None, classifications=()) -> dict:
    out: dict = {}
    if detection is not None:
        det: dict = {
            "correct": detection.correct_points,
            "total": detection.total_points,
            "accuracy": detection.accuracy if detection.total_points else None,
        }
        if detection.total_points == 0:
            det["no_data"] = True
        if detection.macro_accuracy is not None:
            det["macro_accuracy"] = detection.macro_accuracy
        out["detection"] = det
    entries = []
    for score in classifications:
        entry: dict = {
            "scheme": score.scheme,
            "tp": score.true_positives,
            "total": score.total,
            "accuracy": score.accuracy,
            "confusion": score.confusion.tolist(),
        }
        if score.total == 0:
            entry["no_data"] = True
        entries.append(entry)
    if len(entries) == 1:
        out["classification"] = entries[0]
    elif entries:
        out["classifications"] = entries
    return out


def render_report(detection, classifications=(), fmt: str = "json") -> str:
    """Render scores as canonical JSON or aligned text."""
    import json

    doc = report_dict(detection, classifications)
    if fmt == "json":
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = []
    if "detection" in doc:
        d = doc["detection"]
        acc = "no data" if d.get("no_data") else f"{d['accuracy']:.4f}"
        lines.append(f"detection accuracy   {acc:>10}  ({d['correct']}/{d['total']} points)")
        if "macro_accuracy" in d:
            lines.append(f"detection macro      {d['macro_accuracy']:>10.4f}")
    for entry in doc.get("classifications", [doc["classification"]] if "classification" in doc else []):
        acc = "no data" if entry.get("no_data") else f"{entry['accuracy']:.4f}"
        lines.append(
            f"{entry['scheme'].lower()}-class accuracy   {acc:>10}  "
            f"({entry['tp']}/{entry['total']} lanes)"
        )
        lines.append(f"confusion ({entry['scheme'].lower()}): {entry['confusion']}")
    return "\n".join(lines) + "\n"
