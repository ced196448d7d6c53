"""Lane detection and classification toolkit, trainable at desk scale."""

from . import dataset, geometry, losses, metrics, model, synth, tensor, trainer
from .dataset import ClassId, ClassScheme, LaneRecord, SEVEN, SIX, TWO, get_scheme
from .geometry import LaneCurve, RowAnchorGrid, decode, encode, fit_spline, sample_at_anchors
from .losses import LossReport, LossWeights
from .metrics import ClassificationScore, DetectionScore, EvalConfig
from .model import Model, ModelConfig, ModelOutput, build
from .synth import SynthSpec, generate_synthetic
from .tensor import F16E, F32, F64, Tensor, backward
from .trainer import MPConfig, OptimConfig, TrainState, fit, lr_at

__version__ = "0.1.0"

__all__ = [
    "ClassId", "ClassScheme", "ClassificationScore", "DetectionScore",
    "EvalConfig", "F16E", "F32", "F64", "LaneCurve", "LaneRecord",
    "LossReport", "LossWeights", "MPConfig", "Model", "ModelConfig",
    "ModelOutput", "OptimConfig", "RowAnchorGrid", "SEVEN", "SIX",
    "SynthSpec", "Tensor", "TrainState", "TWO", "backward", "build",
    "dataset", "decode", "encode", "fit", "fit_spline", "generate_synthetic",
    "geometry", "get_scheme", "losses", "lr_at", "metrics", "model",
    "sample_at_anchors", "synth", "tensor", "trainer",
]
