"""Training loop: SGD with momentum, polynomial LR decay, emulated mixed precision.

FP32 is the reference path. The mixed-precision path casts the F32 master
weights to the emulated half dtype, runs forward and backward there with a
scaled loss, unscales the gradients back in F32, and either updates the
master weights or, when any gradient is non-finite, skips the step and
backs the loss scale off. Everything is deterministic given (seed, config,
data): shuffles and augmentation draws derive from the seed and epoch, so
a run resumed from a checkpoint continues bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses, metrics, tensor as T
from .dataset import LaneRecord, get_scheme, image_to_float, read_ppm
from .geometry import RowAnchorGrid, encode
from .losses import LossWeights
from .model import Model, save_model, load_model
from .tensor import F16E, F32, Tensor


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lr0": self.lr0, "momentum": self.momentum,
            "weight_decay": self.weight_decay, "epochs": self.epochs,
            "batch_size": self.batch_size, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        return cls(**{k: d[k] for k in
                      ("lr0", "momentum", "weight_decay", "epochs", "batch_size", "seed")
                      if k in d})


@dataclass(frozen=True)
class MPConfig:
    enabled: bool = False
    initial_loss_scale: float = 1024.0
    policy: str = "dynamic"
    growth_interval: int = 200
    backoff_factor: float = 0.5
    growth_factor: float = 2.0

    def __post_init__(self):
        if self.initial_loss_scale <= 0:
            raise ValueError("initial_loss_scale must be positive")
        if self.policy not in ("static", "dynamic"):
            raise ValueError(f"policy must be static or dynamic, got {self.policy!r}")
        if self.policy == "dynamic":
            exp = np.log2(self.initial_loss_scale)
            if exp != round(exp):
                raise ValueError("dynamic loss scale must be a power of two")
        if self.growth_interval < 1:
            raise ValueError("growth_interval must be >= 1")

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled, "initial_loss_scale": self.initial_loss_scale,
            "policy": self.policy, "growth_interval": self.growth_interval,
            "backoff_factor": self.backoff_factor, "growth_factor": self.growth_factor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MPConfig":
        keys = ("enabled", "initial_loss_scale", "policy", "growth_interval",
                "backoff_factor", "growth_factor")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass
class TrainState:
    """Master F32 weights live on the model; this holds everything else."""

    momentum: list
    epoch: int = 0
    global_step: int = 0
    loss_scale: float = 1024.0
    clean_steps: int = 0
    best_val: float = -1.0
    seed: int = 0

    @classmethod
    def fresh(cls, model: Model, optim: OptimConfig, mp: MPConfig) -> "TrainState":
        return cls(
            momentum=[np.zeros(p.shape, dtype=np.float32) for p in model.parameters()],
            loss_scale=float(mp.initial_loss_scale),
            seed=optim.seed,
        )

    def to_blob(self) -> dict:
        return {
            "momentum": self.momentum,
            "epoch": self.epoch,
            "global_step": self.global_step,
            "loss_scale": self.loss_scale,
            "clean_steps": self.clean_steps,
            "best_val": self.best_val,
            "rng": {"seed": self.seed},
        }

    @classmethod
    def from_blob(cls, blob: dict) -> "TrainState":
        return cls(
            momentum=blob["momentum"],
            epoch=int(blob["epoch"]),
            global_step=int(blob["global_step"]),
            loss_scale=float(blob["loss_scale"]),
            clean_steps=int(blob["clean_steps"]),
            best_val=float(blob["best_val"]),
            seed=int(blob["rng"]["seed"]),
        )


def lr_at(epoch: int, cfg: OptimConfig) -> float:
    """Polynomial decay lr0 * (1 - epoch/epochs)^0.9, strictly decreasing."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * (1.0 - epoch / cfg.epochs) ** 0.9


def sgd_step(model: Model, state: TrainState, lr: float,
             momentum: float, weight_decay: float) -> None:
    """v = momentum*v + (g + wd*w); w -= lr*v. Gradients must be finite."""
    params = model.parameters()
    for p, v in zip(params, state.momentum):
        if p.grad is None:
            raise RuntimeError("sgd_step: a parameter has no gradient")
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("sgd_step: non-finite gradient")
        g = g + weight_decay * p.data
        v *= momentum
        v += g
        p.data = p.data - np.float32(lr) * v
    for p in params:
        p.grad = None


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))


def train_step_fp32(model: Model, batch, state: TrainState, weights: LossWeights,
                    optim: OptimConfig, grid: RowAnchorGrid):
    """forward -> total loss -> backward -> SGD update at the epoch's lr."""
    images, targets, class_targets, mask = batch
    T.reset_tape()
    out = model.forward(Tensor(images, F32), mode="train")
    total, report = losses.compute_losses(
        out.det_logits, out.cls_logits, targets, class_targets, mask, weights, grid
    )
    if not np.isfinite(report.total):
        raise FloatingPointError(
            f"non-finite loss at step {state.global_step} (epoch {state.epoch}): "
            f"{report.to_json(state.global_step)}"
        )
    T.backward(total)
    sgd_step(model, state, lr_at(state.epoch, optim), optim.momentum, optim.weight_decay)
    state.global_step += 1
    return report


def train_step_mp(model: Model, batch, state: TrainState, weights: LossWeights,
                  optim: OptimConfig, mp: MPConfig, grid: RowAnchorGrid,
                  loss_factor: float = 1.0):
    """Scaled half-precision step; returns (report, skipped).

    ``loss_factor`` is a fault-injection knob for exercising the overflow
    path; it multiplies the loss before scaling.
    """
    if not mp.enabled:
        raise ValueError("train_step_mp called with mixed precision disabled")
    images, targets, class_targets, mask = batch
    T.reset_tape()
    # half-precision overflow is expected here and detected after unscaling,
    # so let non-finite values propagate silently
    with np.errstate(over="ignore", invalid="ignore"):
        out = model.forward(Tensor(images, F32), mode="train", compute_dtype=F16E)
        total, report = losses.compute_losses(
            out.det_logits, out.cls_logits, targets, class_targets, mask, weights, grid
        )
        if loss_factor != 1.0:
            total = total * loss_factor
        scaled = total * state.loss_scale
        T.backward(scaled)

    params = model.parameters()
    inv = 1.0 / state.loss_scale
    ok = True
    grads = []
    for p in params:
        if p.grad is None:
            ok = False
            break
        g = p.grad.astype(np.float32) * np.float32(inv)
        if not _finite(g):
            ok = False
            break
        grads.append(g)

    if not ok:
        for p in params:
            p.grad = None
        if mp.policy == "dynamic":
            state.loss_scale *= mp.backoff_factor
            if state.loss_scale < 1.0:
                raise FloatingPointError(
                    "loss scale underflowed below 1: training is diverging in half precision"
                )
        state.clean_steps = 0
        state.global_step += 1
        return report, True

    for p, g in zip(params, grads):
        p.grad = g
    sgd_step(model, state, lr_at(state.epoch, optim), optim.momentum, optim.weight_decay)
    state.clean_steps += 1
    if mp.policy == "dynamic" and state.clean_steps % mp.growth_interval == 0:
        state.loss_scale *= mp.growth_factor
    state.global_step += 1
    return report, False


# ---------------------------------------------------------------------------
# batch assembly


class BatchSource:
    """Loads, caches, optionally augments, and encodes records into batches."""

    def __init__(self, records, images_dir, grid: RowAnchorGrid, max_lanes: int,
                 scheme="two", augment_params=None):
        self.records = list(records)
        self.images_dir = Path(images_dir)
        self.grid = grid
        self.max_lanes = max_lanes
        self.scheme = get_scheme(scheme)
        self.augment_params = augment_params
        self._cache: dict = {}

    def _image(self, raw_file: str) -> np.ndarray:
        img = self._cache.get(raw_file)
        if img is None:
            img = image_to_float(read_ppm(self.images_dir / raw_file))
            self._cache[raw_file] = img
        return img

    def encode_one(self, rec: LaneRecord, image: np.ndarray):
        targets = encode(rec.lanes, self.grid, max_lanes=self.max_lanes)
        class_targets = np.zeros(self.max_lanes, dtype=np.int64)
        mask = np.zeros(self.max_lanes, dtype=np.float64)
        for i in rec.real_lane_indices():
            mask[i] = 1.0
            if rec.classes is not None:
                class_targets[i] = self.scheme.compact(int(rec.classes[i]))
        return image.transpose(2, 0, 1), targets, class_targets, mask

    def batch(self, indices, epoch: int | None = None, seed: int | None = None):
        imgs, tgts, ctgts, masks = [], [], [], []
        for idx in indices:
            rec = self.records[idx]
            img = self._image(rec.raw_file)
            if self.augment_params is not None and epoch is not None:
                aug_seed = int(np.random.SeedSequence([seed, epoch, int(idx)]).generate_state(1)[0])
                img, rec = _augmented(rec, img, self.augment_params, aug_seed, self.grid)
            chw, t, ct, m = self.encode_one(rec, img)
            imgs.append(chw)
            tgts.append(t)
            ctgts.append(ct)
            masks.append(m)
        return (np.stack(imgs).astype(np.float32), np.stack(tgts),
                np.stack(ctgts), np.stack(masks))


def _augmented(rec, img, params, seed, grid):
    from .dataset import augment

    return augment(rec, img, params, seed, grid=grid)


def predict_records(model: Model, records, images_dir, scheme="two",
                    batch_size: int = 8) -> list[LaneRecord]:
    """Run inference and package the outputs as dataset records."""
    scheme = get_scheme(scheme)
    images_dir = Path(images_dir)
    out = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        imgs = np.stack([
            image_to_float(read_ppm(images_dir / r.raw_file)).transpose(2, 0, 1)
            for r in chunk
        ]).astype(np.float32)
        for rec, (lanes, classes) in zip(chunk, model.predict(imgs)):
            out.append(LaneRecord(
                raw_file=rec.raw_file,
                h_samples=list(model.config.grid.h_samples),
                lanes=[[round(float(x), 3) for x in lane] for lane in lanes],
                classes=[scheme.id_of_compact(c) for c in classes],
            ))
    return out


# ---------------------------------------------------------------------------
# fit


def fit(model: Model, train_records, val_records, optim: OptimConfig, mp: MPConfig,
        weights: LossWeights, train_dir, val_dir, out_dir=None, scheme="two",
        eval_cfg: metrics.EvalConfig | None = None, augment_params=None,
        resume: str | None = None):
    """Epoch loop with seeded shuffles, per-epoch validation, and checkpoints.

    Returns (model, history) where history has one entry per step under
    "steps" and one per epoch under "epochs". The best checkpoint by
    validation detection accuracy is kept alongside the per-epoch ones.
    """
    if not train_records:
        raise ValueError("training set is empty")
    grid = model.config.grid
    if eval_cfg is None:
        eval_cfg = metrics.EvalConfig(image_width=grid.image_width, scheme=get_scheme(scheme).name.lower())
    source = BatchSource(train_records, train_dir, grid, model.config.max_lanes,
                         scheme=scheme, augment_params=augment_params)

    if resume is not None:
        loaded, blob = load_model(resume, model.config)
        if blob is None:
            raise ValueError(f"{resume}: checkpoint has no trainer state to resume from")
        for p, q in zip(model.parameters(), loaded.parameters()):
            p.data = q.data
        for b, c in zip(model.buffers(), loaded.buffers()):
            b[...] = c
        state = TrainState.from_blob(blob)
    else:
        state = TrainState.fresh(model, optim, mp)

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        (out_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "history.jsonl", "a", encoding="utf-8")

    history = {"steps": [], "epochs": []}
    try:
        for epoch in range(state.epoch, optim.epochs):
            state.epoch = epoch
            order = np.arange(len(train_records))
            shuffle_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([optim.seed, epoch]))
            )
            shuffle_rng.shuffle(order)
            epoch_losses = []
            skipped = 0
            for start in range(0, len(order), optim.batch_size):
                batch = source.batch(order[start : start + optim.batch_size],
                                     epoch=epoch, seed=optim.seed)
                if mp.enabled:
                    report, was_skipped = train_step_mp(
                        model, batch, state, weights, optim, mp, grid)
                    skipped += int(was_skipped)
                else:
                    report = train_step_fp32(model, batch, state, weights, optim, grid)
                entry = json.loads(report.to_json(state.global_step - 1))
                history["steps"].append(entry)
                epoch_losses.append(report.total)
                if log_fh:
                    log_fh.write(json.dumps(entry, separators=(",", ":")) + "\n")

            summary = {
                "epoch": epoch,
                "lr": lr_at(epoch, optim),
                "train_loss": float(np.mean(epoch_losses)),
                "skipped_steps": skipped,
                "loss_scale": state.loss_scale if mp.enabled else None,
            }
            if val_records:
                preds = predict_records(model, val_records, val_dir, scheme=scheme,
                                        batch_size=optim.batch_size)
                det = metrics.detection_accuracy(preds, val_records, eval_cfg)
                summary["val_detection"] = det.accuracy
                if all(r.classes is not None for r in val_records):
                    cls = metrics.classification_accuracy(preds, val_records, eval_cfg)
                    summary["val_classification"] = cls.accuracy
                if det.accuracy > state.best_val:
                    state.best_val = det.accuracy
                    if out_path is not None:
                        state.epoch = epoch + 1
                        save_model(model, out_path / "checkpoints" / "best.ckpt",
                                   trainer_state=state.to_blob())
                        state.epoch = epoch
            history["epochs"].append(summary)
            if log_fh:
                log_fh.write(json.dumps(summary, separators=(",", ":")) + "\n")
                log_fh.flush()
            if out_path is not None:
                state.epoch = epoch + 1  # resume target: the next epoch
                save_model(model, out_path / "checkpoints" / f"epoch_{epoch:03d}.ckpt",
                           trainer_state=state.to_blob())
    finally:
        if log_fh:
            log_fh.close()
    return model, history
