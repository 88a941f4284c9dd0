"""Aspect-ratio-conditioned thumbnail generation, self-contained at desk scale.

A small trainable backbone feeds a global-context attention block; a region
proposal head with aspect-conditioned (dynamically generated) 1×1 convolutions
emits candidate crops and representativeness scores. Training, evaluation
metrics, synthetic data generation, and finite-difference gradient checks are
all included — see the README for the CLI walkthrough.
"""

__version__ = "0.1.0"

from .data import AnnotatedSample, crop_and_resize, load_annotations, load_image, save_annotations, save_image
from .geometry import AnchorGrid, BoxCWH, BoxDelta, clip_box, decode, encode, generate_anchors, iou, snap_aspect
from .metrics import MetricsReport, compute_sample_metrics, evaluate, predict_box
from .model import ModelConfig, ModelParams, full_forward, init_model, load_model, save_model
from .synth import SceneConfig, gen_synthetic
from .tensor import GradTape, Tensor, backward, grad_check
from .training import TrainConfig, assign_targets, sample_minibatch, total_loss, train

__all__ = [
    "__version__",
    "AnnotatedSample",
    "AnchorGrid",
    "BoxCWH",
    "BoxDelta",
    "GradTape",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "SceneConfig",
    "Tensor",
    "TrainConfig",
    "assign_targets",
    "backward",
    "clip_box",
    "compute_sample_metrics",
    "crop_and_resize",
    "decode",
    "encode",
    "evaluate",
    "full_forward",
    "gen_synthetic",
    "generate_anchors",
    "grad_check",
    "init_model",
    "iou",
    "load_annotations",
    "load_image",
    "load_model",
    "predict_box",
    "sample_minibatch",
    "save_annotations",
    "save_image",
    "save_model",
    "snap_aspect",
    "total_loss",
    "train",
]
