"""End-to-end network: backbone, row-anchor detection head, class branch.

The backbone is a configurable conv/pool stack; its output passes through a
shared 1x1 conv, is flattened, and then splits into (a) a dense detection
head emitting ``M * h * (w+1)`` grid logits and (b) a classification branch
of Dense+BatchNorm+ReLU, Dense+ReLU, and a final Dense emitting ``M * C``
class logits. Softmax is applied by the losses and at inference, never
stored in the outputs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import RowAnchorGrid, decode
from .tensor import F32, Tensor


def default_backbone(channels=(8, 16, 32, 64), batchnorm: bool = False,
                     pools: int | None = None) -> list:
    """Conv stages with optional per-stage batchnorm; ``pools`` caps how many
    stages end in a 2x2 max-pool (default: all of them)."""
    layers = []
    for i, c in enumerate(channels):
        layers.append({"kind": "conv", "out_channels": int(c), "kernel": 3, "stride": 1, "padding": 1})
        if batchnorm:
            layers.append({"kind": "bn"})
        layers.append({"kind": "relu"})
        if pools is None or i < pools:
            layers.append({"kind": "pool", "kernel": 2, "stride": 2})
    return layers


@dataclass(frozen=True)
class ModelConfig:
    input_width: int
    input_height: int
    grid: RowAnchorGrid
    max_lanes: int = 6
    num_classes: int = 2
    backbone: tuple = field(default_factory=lambda: tuple(default_backbone()))
    shared_channels: int = 8
    branch_hidden: tuple = (256, 128)
    det_hidden: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "backbone", tuple(dict(l) for l in self.backbone))
        object.__setattr__(self, "branch_hidden", tuple(int(v) for v in self.branch_hidden))
        if self.max_lanes < 1:
            raise ValueError("max_lanes must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.branch_hidden) != 2:
            raise ValueError("branch_hidden must name exactly two dense widths")

    def to_dict(self) -> dict:
        return {
            "input_width": self.input_width,
            "input_height": self.input_height,
            "grid": self.grid.to_dict(),
            "max_lanes": self.max_lanes,
            "num_classes": self.num_classes,
            "backbone": [dict(l) for l in self.backbone],
            "shared_channels": self.shared_channels,
            "branch_hidden": list(self.branch_hidden),
            "det_hidden": self.det_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            input_width=int(d["input_width"]),
            input_height=int(d["input_height"]),
            grid=RowAnchorGrid.from_dict(d["grid"]),
            max_lanes=int(d.get("max_lanes", 6)),
            num_classes=int(d.get("num_classes", 2)),
            backbone=tuple(d.get("backbone", default_backbone())),
            shared_channels=int(d.get("shared_channels", 8)),
            branch_hidden=tuple(d.get("branch_hidden", (256, 128))),
            det_hidden=(None if d.get("det_hidden") is None else int(d["det_hidden"])),
        )

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).digest()


@dataclass
class ModelOutput:
    det_logits: Tensor  # [batch, M, h, w+1]
    cls_logits: Tensor  # [batch, M, C]


class _Conv:
    def __init__(self, rng, in_c, out_c, kernel, stride, padding):
        std = float(np.sqrt(2.0 / (in_c * kernel * kernel)))
        self.w = Tensor(rng.normal(0.0, std, (out_c, in_c, kernel, kernel)), F32, requires_grad=True)
        self.b = Tensor(np.zeros(out_c), F32, requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x, dtype):
        w, b = _maybe_cast(self.w, dtype), _maybe_cast(self.b, dtype)
        return T.conv2d(x, w, b, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.w, self.b]


class _Dense:
    def __init__(self, rng, in_f, out_f):
        std = float(np.sqrt(2.0 / in_f))
        self.w = Tensor(rng.normal(0.0, std, (in_f, out_f)), F32, requires_grad=True)
        self.b = Tensor(np.zeros(out_f), F32, requires_grad=True)

    def __call__(self, x, dtype):
        return T.dense(x, _maybe_cast(self.w, dtype), _maybe_cast(self.b, dtype))

    def params(self):
        return [self.w, self.b]


class _BatchNorm:
    def __init__(self, features):
        self.gamma = Tensor(np.ones(features), F32, requires_grad=True)
        self.beta = Tensor(np.zeros(features), F32, requires_grad=True)
        self.running_mean = np.zeros(features, dtype=np.float32)
        self.running_var = np.ones(features, dtype=np.float32)

    def __call__(self, x, training, dtype):
        return T.batch_norm(
            x,
            _maybe_cast(self.gamma, dtype),
            _maybe_cast(self.beta, dtype),
            self.running_mean,
            self.running_var,
            training=training,
        )

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]


def _maybe_cast(p: Tensor, dtype):
    return p if dtype is None or dtype == p.dtype else T.cast(p, dtype)


class Model:
    """Holds F32 master parameters; ``forward`` may run in a casted precision."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.Generator(np.random.PCG64(seed))
        g = config.grid

        c, h, w = 3, config.input_height, config.input_width
        self.backbone = []
        for i, spec in enumerate(config.backbone):
            kind = spec["kind"]
            if kind == "conv":
                layer = _Conv(rng, c, spec["out_channels"], spec.get("kernel", 3),
                              spec.get("stride", 1), spec.get("padding", 0))
                c = spec["out_channels"]
                k, s, p = spec.get("kernel", 3), spec.get("stride", 1), spec.get("padding", 0)
                h = (h + 2 * p - k) // s + 1
                w = (w + 2 * p - k) // s + 1
                self.backbone.append(("conv", layer))
            elif kind == "relu":
                self.backbone.append(("relu", None))
            elif kind == "bn":
                self.backbone.append(("bn", _BatchNorm(c)))
            elif kind == "pool":
                k, s = spec.get("kernel", 2), spec.get("stride", spec.get("kernel", 2))
                h = (h - k) // s + 1
                w = (w - k) // s + 1
                self.backbone.append(("pool", (k, s)))
            else:
                raise ValueError(f"backbone layer {i}: unknown kind {kind!r}")
            if h < 1 or w < 1:
                raise ValueError(
                    f"backbone layer {i} ({kind}) shrinks the feature map to "
                    f"{h}x{w}; input {config.input_height}x{config.input_width} is too small"
                )

        self.shared = _Conv(rng, c, config.shared_channels, 1, 1, 0)
        self.feature_size = config.shared_channels * h * w
        det_out = config.max_lanes * g.h * (g.w + 1)
        if config.det_hidden is None:
            self.det_pre = None
            self.det_head = _Dense(rng, self.feature_size, det_out)
        else:
            self.det_pre = _Dense(rng, self.feature_size, config.det_hidden)
            self.det_head = _Dense(rng, config.det_hidden, det_out)
        h1, h2 = config.branch_hidden
        self.cls_dense1 = _Dense(rng, self.feature_size, h1)
        self.cls_bn = _BatchNorm(h1)
        self.cls_dense2 = _Dense(rng, h1, h2)
        self.cls_dense3 = _Dense(rng, h2, config.max_lanes * config.num_classes)

    def parameters(self) -> list:
        out = []
        for kind, layer in self.backbone:
            if kind in ("conv", "bn"):
                out.extend(layer.params())
        out.extend(self.shared.params())
        if self.det_pre is not None:
            out.extend(self.det_pre.params())
        out.extend(self.det_head.params())
        out.extend(self.cls_dense1.params())
        out.extend(self.cls_bn.params())
        out.extend(self.cls_dense2.params())
        out.extend(self.cls_dense3.params())
        return out

    def buffers(self) -> list:
        out = []
        for kind, layer in self.backbone:
            if kind == "bn":
                out.extend(layer.buffers())
        out.extend(self.cls_bn.buffers())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, images, mode: str = "train", compute_dtype: str | None = None) -> ModelOutput:
        """Run the network; train mode uses batch statistics, eval running ones."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(images, F32)
        if compute_dtype is not None and x.dtype != compute_dtype:
            x = T.cast(x, compute_dtype)
        if x.data.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.input_height or x.shape[3] != cfg.input_width:
            raise ValueError(
                f"forward: images must be [batch, 3, {cfg.input_height}, {cfg.input_width}], "
                f"got {tuple(x.shape)}"
            )
        training = mode == "train"
        for kind, layer in self.backbone:
            if kind == "conv":
                x = layer(x, compute_dtype)
            elif kind == "bn":
                x = layer(x, training, compute_dtype)
            elif kind == "relu":
                x = T.relu(x)
            else:
                k, s = layer
                x = T.maxpool2d(x, kernel=k, stride=s)
        x = T.relu(self.shared(x, compute_dtype))
        feats = T.flatten(x, 1)

        batch = feats.shape[0]
        g = cfg.grid
        det_in = feats
        if self.det_pre is not None:
            det_in = T.relu(self.det_pre(feats, compute_dtype))
        det = self.det_head(det_in, compute_dtype)
        det = T.reshape(det, (batch, cfg.max_lanes, g.h, g.w + 1))

        y = self.cls_dense1(feats, compute_dtype)
        y = T.relu(self.cls_bn(y, training, compute_dtype))
        y = T.relu(self.cls_dense2(y, compute_dtype))
        y = self.cls_dense3(y, compute_dtype)
        cls = T.reshape(y, (batch, cfg.max_lanes, cfg.num_classes))
        return ModelOutput(det_logits=det, cls_logits=cls)

    def predict(self, images, grid: RowAnchorGrid | None = None):
        """Per image: decoded lanes plus an argmax class per kept lane slot.

        Lane slots whose anchors are all background are omitted together
        with their class.
        """
        grid = grid or self.config.grid
        with T.no_grad():
            out = self.forward(images, mode="eval")
        det = out.det_logits.data
        cls = out.cls_logits.data.argmax(axis=-1)
        results = []
        for i in range(det.shape[0]):
            lanes = decode(det[i], grid)
            kept_lanes, kept_classes = [], []
            for m, lane in enumerate(lanes):
                if any(x != -2 for x in lane):
                    kept_lanes.append(lane)
                    kept_classes.append(int(cls[i, m]))
            results.append((kept_lanes, kept_classes))
        return results


def build(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed=seed)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config digest, then parameters as
# little-endian float32 in declared order, then running statistics.

MAGIC = b"LKCK"
VERSION = 1


def _write_arrays(fh, arrays) -> None:
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def save_model(model: Model, path, trainer_state: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(model.config.digest())
        _write_arrays(fh, (p.data for p in model.parameters()))
        _write_arrays(fh, model.buffers())
        if trainer_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            _write_arrays(fh, trainer_state["momentum"])
            fh.write(struct.pack("<qqdqd",
                                 trainer_state["epoch"],
                                 trainer_state["global_step"],
                                 trainer_state["loss_scale"],
                                 trainer_state["clean_steps"],
                                 trainer_state["best_val"]))
            rng_blob = json.dumps(trainer_state["rng"], sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(rng_blob)))
            fh.write(rng_blob)


def load_model(path, config: ModelConfig):
    """Rebuild a model from a checkpoint; the config digest must match.

    Returns (model, trainer_state_or_None).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    digest = blob[8:40]
    if digest != config.digest():
        raise ValueError(f"{path}: checkpoint config digest does not match the given config")
    model = Model(config, seed=0)
    pos = 40
    for p in model.parameters():
        n = p.size * 4
        p.data = np.frombuffer(blob, dtype="<f4", count=p.size, offset=pos).reshape(p.shape).astype(np.float32)
        pos += n
    for buf in model.buffers():
        buf[...] = np.frombuffer(blob, dtype="<f4", count=buf.size, offset=pos).reshape(buf.shape)
        pos += buf.size * 4
    (flag,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if flag == 0:
        return model, None
    momentum = []
    for p in model.parameters():
        momentum.append(
            np.frombuffer(blob, dtype="<f4", count=p.size, offset=pos).reshape(p.shape).astype(np.float32)
        )
        pos += p.size * 4
    epoch, global_step, loss_scale, clean_steps, best_val = struct.unpack_from("<qqdqd", blob, pos)
    pos += struct.calcsize("<qqdqd")
    (rng_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    rng = json.loads(blob[pos : pos + rng_len].decode("utf-8"))
    state = {
        "momentum": momentum,
        "epoch": epoch,
        "global_step": global_step,
        "loss_scale": loss_scale,
        "clean_steps": clean_steps,
        "best_val": best_val,
        "rng": rng,
    }
    return model, state
