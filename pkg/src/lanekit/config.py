"""Structured run configuration: one JSON file drives train/infer/bench.

Sections map onto the library's config dataclasses. Unknown keys are
rejected everywhere so typos fail loudly, and every config-driven run
writes the fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import AugmentParams
from .losses import LossWeights
from .metrics import EvalConfig
from .model import ModelConfig
from .trainer import MPConfig, OptimConfig

_SECTION_KEYS = {
    "model": {"input_width", "input_height", "grid", "max_lanes", "num_classes",
              "backbone", "shared_channels", "branch_hidden", "det_hidden"},
    "grid": {"image_width", "image_height", "h_samples", "w"},
    "optim": {"lr0", "momentum", "weight_decay", "epochs", "batch_size", "seed"},
    "mp": {"enabled", "initial_loss_scale", "policy", "growth_interval",
           "backoff_factor", "growth_factor"},
    "loss_weights": {"alpha", "lambda", "gamma"},
    "eval": {"pixel_threshold", "image_width", "matching", "scheme", "macro"},
    "data": {"train", "train_images", "val", "val_images"},
    "augment": {"rotation_deg", "rotation_prob", "flip_prob", "scale_range",
                "scale_prob", "translate_x", "translate_y", "translate_prob"},
    "backbone_layer": {"kind", "out_channels", "kernel", "stride", "padding"},
}

_TOP_KEYS = {"model", "optim", "mp", "loss_weights", "eval", "data", "out_dir", "augment"}


def _check_keys(obj: dict, section: str, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    allowed = _SECTION_KEYS[section]
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


@dataclass
class RunConfig:
    model: ModelConfig
    optim: OptimConfig = field(default_factory=OptimConfig)
    mp: MPConfig = field(default_factory=MPConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: str | None = None
    train_images: str | None = None
    val: str | None = None
    val_images: str | None = None
    out_dir: str | None = None
    augment: AugmentParams | None = None

    def to_dict(self) -> dict:
        doc = {
            "model": self.model.to_dict(),
            "optim": self.optim.to_dict(),
            "mp": self.mp.to_dict(),
            "loss_weights": self.loss_weights.to_dict(),
            "eval": {
                "pixel_threshold": self.eval.pixel_threshold,
                "image_width": self.eval.image_width,
                "matching": self.eval.matching,
                "scheme": self.eval.scheme,
                "macro": self.eval.macro,
            },
            "data": {
                "train": self.train, "train_images": self.train_images,
                "val": self.val, "val_images": self.val_images,
            },
            "out_dir": self.out_dir,
        }
        if self.augment is not None:
            doc["augment"] = {
                "rotation_deg": self.augment.rotation_deg,
                "rotation_prob": self.augment.rotation_prob,
                "flip_prob": self.augment.flip_prob,
                "scale_range": list(self.augment.scale_range),
                "scale_prob": self.augment.scale_prob,
                "translate_x": self.augment.translate_x,
                "translate_y": self.augment.translate_y,
                "translate_prob": self.augment.translate_prob,
            }
        return doc


def parse_run_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, rejecting unknown keys.

    Relative dataset paths resolve against ``base_dir`` (the config file's
    directory) so a config means the same thing from any working directory.
    """
    if not isinstance(doc, dict):
        raise ValueError("run config: top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValueError(f"run config: unknown keys {sorted(unknown)}; allowed: {sorted(_TOP_KEYS)}")
    if "model" not in doc:
        raise ValueError("run config: missing required section 'model'")
    _check_keys(doc["model"], "model", "model")
    _check_keys(doc["model"].get("grid", {}), "grid", "model.grid")
    for layer in doc["model"].get("backbone", []):
        _check_keys(layer, "backbone_layer", "model.backbone[]")
    for name in ("optim", "mp", "loss_weights", "eval", "data", "augment"):
        if name in doc and doc[name] is not None:
            _check_keys(doc[name], name, name)

    def _path(p):
        if p is None:
            return None
        p = Path(p)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return str(p)

    data = doc.get("data", {}) or {}
    eval_doc = doc.get("eval", {}) or {}
    aug = None
    if doc.get("augment") is not None:
        a = doc["augment"]
        aug = AugmentParams(
            rotation_deg=float(a.get("rotation_deg", 6.0)),
            rotation_prob=float(a.get("rotation_prob", 0.5)),
            flip_prob=float(a.get("flip_prob", 0.5)),
            scale_range=tuple(a.get("scale_range", (0.9, 1.1))),
            scale_prob=float(a.get("scale_prob", 0.5)),
            translate_x=float(a.get("translate_x", 60.0)),
            translate_y=float(a.get("translate_y", 20.0)),
            translate_prob=float(a.get("translate_prob", 0.5)),
        )
    return RunConfig(
        model=ModelConfig.from_dict(doc["model"]),
        optim=OptimConfig.from_dict(doc.get("optim", {}) or {}),
        mp=MPConfig.from_dict(doc.get("mp", {}) or {}),
        loss_weights=LossWeights.from_dict(doc.get("loss_weights", {}) or {}),
        eval=EvalConfig(
            pixel_threshold=float(eval_doc.get("pixel_threshold", 20.0)),
            image_width=int(eval_doc.get("image_width", 1280)),
            matching=eval_doc.get("matching", "greedy"),
            scheme=eval_doc.get("scheme", "two"),
            macro=bool(eval_doc.get("macro", False)),
        ),
        train=_path(data.get("train")),
        train_images=_path(data.get("train_images")),
        val=_path(data.get("val")),
        val_images=_path(data.get("val_images")),
        out_dir=_path(doc.get("out_dir")),
        augment=aug,
    )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    return parse_run_config(doc, base_dir=path.parent.resolve())


def write_resolved_config(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "resolved_config.json"
    target.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")
    return target
