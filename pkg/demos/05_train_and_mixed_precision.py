#!/usr/bin/env python3
"""A miniature training run, then the same steps in emulated half precision.

Takes about a minute. For the full desk-scale pipeline use the CLI:
see configs/tiny_synthetic.json and the README.
"""

import tempfile
from pathlib import Path

from lanekit.dataset import AugmentParams, ClassId
from lanekit.geometry import RowAnchorGrid
from lanekit.losses import LossWeights
from lanekit.metrics import EvalConfig
from lanekit.model import ModelConfig, build, default_backbone
from lanekit.synth import SynthSpec, generate_synthetic
from lanekit.trainer import (BatchSource, MPConfig, OptimConfig, TrainState,
                             fit, train_step_fp32, train_step_mp)

tmp = Path(tempfile.mkdtemp())
anchors = tuple(range(45, 82, 4))
spec = dict(width=160, height=90, lanes_range=(1, 3), h_samples=anchors,
            class_probs={int(ClassId.SOLID_WHITE): 0.5, int(ClassId.DASHED): 0.5},
            noise_level=0.01, x_jitter=8.0, slope_range=(-0.18, 0.18),
            curvature_range=(-0.0008, 0.0008))
train = generate_synthetic(SynthSpec(count=48, seed=1, **spec), tmp / "train")
val = generate_synthetic(SynthSpec(count=16, seed=2, **spec), tmp / "val")

grid = RowAnchorGrid(160, 90, anchors, 50)
cfg = ModelConfig(input_width=160, input_height=90, grid=grid, max_lanes=3,
                  num_classes=2,
                  backbone=tuple(default_backbone((8, 16, 32, 64), batchnorm=True, pools=3)),
                  shared_channels=16, branch_hidden=(256, 128))
optim = OptimConfig(lr0=0.01, epochs=6, batch_size=8, seed=0)
weights = LossWeights(alpha=0.1, lambda_=0.1, gamma=0.6)

model = build(cfg, seed=0)
model, history = fit(model, train, val, optim, MPConfig(), weights,
                     tmp / "train", tmp / "val",
                     eval_cfg=EvalConfig(image_width=160, scheme="two"),
                     augment_params=AugmentParams(rotation_prob=0, flip_prob=0.5,
                                                  scale_prob=0, translate_prob=0))
for e in history["epochs"]:
    print(f"epoch {e['epoch']}: loss {e['train_loss']:7.2f} "
          f"val detection {e['val_detection']:.3f} val 2-class {e['val_classification']:.3f}")

# --- the same step in FP32 vs emulated FP16 with loss scaling --------------
print("\nmixed precision, side by side on one batch:")
source = BatchSource(train, tmp / "train", grid, cfg.max_lanes, scheme="two")
batch = source.batch(range(8))

fp32_model = build(cfg, seed=3)
state32 = TrainState.fresh(fp32_model, optim, MPConfig())
r32 = train_step_fp32(fp32_model, batch, state32, weights, optim, grid)

mp_model = build(cfg, seed=3)
mp = MPConfig(enabled=True, initial_loss_scale=1024.0)
state16 = TrainState.fresh(mp_model, optim, mp)
r16, skipped = train_step_mp(mp_model, batch, state16, weights, optim, mp, grid)

print(f"  fp32 loss {r32.total:.4f}")
print(f"  fp16 loss {r16.total:.4f} (skipped={skipped}, scale={state16.loss_scale:.0f})")
print(f"  relative difference {abs(r16.total - r32.total) / r32.total:.2e} "
      f"(emulated precision, not hardware FP16 timing)")
