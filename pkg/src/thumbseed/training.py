"""Anchor target assignment, balanced sampling, the combined loss, training.

Anchors overlapping the ground truth above 0.7 IoU (or tied for the best
overlap) are positive, those below 0.3 are negative, the rest are ignored.
Each step samples a 256-anchor minibatch (at most half positive), scores it
with binary cross entropy, regresses the positive anchors' offsets with
smooth-L1, and combines the two terms as

    total = cls_sum / N_cls + lambda * reg_sum / N_reg

with N_cls the minibatch size and N_reg the number of feature cells.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import load_image
from .errors import ContractViolationError, InvalidArgumentError, TrainingDivergenceError
from .geometry import AnchorGrid, BoxCWH, encode_array, iou_array
from .model import ModelConfig, ModelParams, RpnOutputs, anchors_for, init_model, model_forward, save_model
from .optim import AdamState, adam_step
from .tensor import (
    GradTape,
    Tensor,
    add,
    backward,
    bce_elems,
    gather0,
    grad_or_zero,
    reshape,
    scale,
    smooth_l1_elems,
    sub,
    tensor_sum,
    zero_grads,
)
from .util import stream_rng

POSITIVE_IOU = 0.7
NEGATIVE_IOU = 0.3
ARGMAX_TIE_TOL = 1e-9


@dataclass
class TargetAssignment:
    """Per-anchor label (1 positive, 0 negative, -1 ignore) and encoded targets."""

    labels: np.ndarray          # (N,) int8
    deltas: np.ndarray          # (N, 4) float32, meaningful where labels == 1
    ious: np.ndarray            # (N,) float64


def assign_targets(anchors: AnchorGrid, gt: BoxCWH) -> TargetAssignment:
    ious = iou_array(anchors.boxes, gt)
    labels = np.full(len(anchors), -1, dtype=np.int8)
    labels[ious < NEGATIVE_IOU] = 0
    labels[ious > POSITIVE_IOU] = 1
    best = ious.max()
    if best > 0:
        labels[ious >= best - ARGMAX_TIE_TOL] = 1
    deltas = np.zeros((len(anchors), 4), dtype=np.float32)
    pos = np.flatnonzero(labels == 1)
    if pos.size:
        deltas[pos] = encode_array(gt, anchors.boxes[pos]).astype(np.float32)
    return TargetAssignment(labels=labels, deltas=deltas, ious=ious)


@dataclass
class MiniBatch:
    """Sampled anchor indices with their 0/1 labels; positives capped at half."""

    indices: np.ndarray  # (B,) int64
    labels: np.ndarray   # (B,) float32

    def __len__(self) -> int:
        return len(self.indices)


def sample_minibatch(assignment: TargetAssignment, size: int = 256,
                     rng: np.random.Generator | None = None) -> MiniBatch:
    """Up to size/2 positives plus negatives, both drawn without replacement."""
    if rng is None:
        rng = np.random.default_rng(0)
    pos = np.flatnonzero(assignment.labels == 1)
    neg = np.flatnonzero(assignment.labels == 0)
    if neg.size == 0:
        raise ContractViolationError("no negative anchors available to sample")
    n_pos = min(pos.size, size // 2)
    chosen_pos = rng.choice(pos, size=n_pos, replace=False) if n_pos else np.empty(0, dtype=np.int64)
    n_neg = min(neg.size, size - n_pos)
    chosen_neg = rng.choice(neg, size=n_neg, replace=False)
    indices = np.concatenate([chosen_pos, chosen_neg]).astype(np.int64)
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)]).astype(np.float32)
    return MiniBatch(indices=indices, labels=labels)


def smooth_l1(x: float) -> float:
    """Reference scalar form: 0.5·x² below |x| = 1, |x| − 0.5 above."""
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def bce(p: float, label: int) -> float:
    """Reference scalar binary cross entropy with clamped probability."""
    pc = min(max(p, 1e-7), 1.0 - 1e-7)
    return -(label * math.log(pc) + (1 - label) * math.log(1.0 - pc))


@dataclass
class LossBreakdown:
    """Scalar summary of one step; ``loss`` is the live tensor when taped."""

    total: float
    cls: float          # raw classification sum over the minibatch
    reg: float          # raw regression sum over positive minibatch anchors
    lam: float
    n_cls: int
    n_reg: int
    loss: Tensor | None = field(default=None, repr=False)


def total_loss(batch: MiniBatch, outputs: RpnOutputs, targets: TargetAssignment,
               lam: float, tape: GradTape | None = None) -> LossBreakdown:
    h, w, k = outputs.scores.data.shape
    n = h * w * k
    if batch.indices.size == 0 or batch.indices.max() >= n:
        raise InvalidArgumentError("minibatch indices out of range for the output grid")
    n_cls = len(batch)
    n_reg = h * w

    flat_scores = reshape(outputs.scores, (n,), tape)
    picked = gather0(flat_scores, batch.indices, tape)
    cls_sum = tensor_sum(bce_elems(picked, batch.labels, tape), tape)

    pos_anchor_idx = batch.indices[batch.labels == 1.0]
    if pos_anchor_idx.size:
        flat_deltas = reshape(outputs.deltas, (n, 4), tape)
        pred = gather0(flat_deltas, pos_anchor_idx, tape)
        target = Tensor(targets.deltas[pos_anchor_idx])
        reg_sum = tensor_sum(smooth_l1_elems(sub(pred, target, tape), tape), tape)
    else:
        reg_sum = Tensor(0.0)

    loss = add(scale(cls_sum, 1.0 / n_cls, tape), scale(reg_sum, lam / n_reg, tape), tape)
    return LossBreakdown(
        total=float(loss.data),
        cls=float(cls_sum.data),
        reg=float(reg_sum.data),
        lam=lam,
        n_cls=n_cls,
        n_reg=n_reg,
        loss=loss,
    )


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 10.0
    seed: int = 7
    batch_size: int = 256
    checkpoint_every: int = 1000


@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float, float, float]]  # (step, total, cls, reg)
    elapsed: float


def train(samples, data_root, model_config: ModelConfig, train_config: TrainConfig,
          out_dir=None, params: ModelParams | None = None) -> TrainResult:
    """One sample per step: forward → assign → sample batch → loss → Adam.

    Periodic checkpoints go to ``out_dir`` when given; a non-finite loss or
    gradient aborts with the last periodic checkpoint still on disk.
    """
    if not samples:
        raise InvalidArgumentError("training dataset is empty")
    if params is None:
        params = init_model(model_config, train_config.seed)
    named = params.named_tensors()
    state = AdamState.for_params(named)
    order_rng = stream_rng(train_config.seed, "order")
    batch_rng = stream_rng(train_config.seed, "batch")
    root = Path(data_root)
    anchor_cache: dict[float, AnchorGrid] = {}
    assignment_cache: dict[int, TargetAssignment] = {}
    history: list[tuple[int, float, float, float]] = []
    started = time.perf_counter()

    for step in range(1, train_config.steps + 1):
        idx = int(order_rng.integers(0, len(samples)))
        sample = samples[idx]
        image = Tensor(load_image(root / sample.image))
        aspect = sample.aspect_ratio
        if aspect not in anchor_cache:
            anchor_cache[aspect] = anchors_for(model_config, aspect)
        anchors = anchor_cache[aspect]
        if idx not in assignment_cache:
            assignment_cache[idx] = assign_targets(anchors, sample.box)
        assignment = assignment_cache[idx]

        tape = GradTape()
        outputs = model_forward(image, aspect, params, tape)
        batch = sample_minibatch(assignment, train_config.batch_size, batch_rng)
        breakdown = total_loss(batch, outputs, assignment, train_config.lam, tape)
        if not math.isfinite(breakdown.total):
            raise TrainingDivergenceError(f"non-finite loss at step {step}")
        backward(breakdown.loss, tape)
        grads = {name: grad_or_zero(t) for name, t in named.items()}
        zero_grads(named.values())
        adam_step(named, grads, state, train_config.lr, train_config.beta1, train_config.beta2)
        history.append((step, breakdown.total, breakdown.cls, breakdown.reg))

        if out_dir is not None and step % train_config.checkpoint_every == 0:
            save_model(Path(out_dir) / f"model_step_{step:06d}.thmb", params)

    return TrainResult(params=params, history=history, elapsed=time.perf_counter() - started)


def smoothed_loss(history, step: int, window: int = 50) -> float:
    """Mean total loss over the ``window`` steps ending at ``step``."""
    totals = [t for s, t, _, _ in history if step - window < s <= step]
    if not totals:
        raise InvalidArgumentError(f"no history in window ending at step {step}")
    return float(np.mean(totals))


def write_loss_csv(history, path) -> None:
    lines = ["step,total,cls,reg"]
    lines += [f"{s},{t!r},{c!r},{r!r}" for s, t, c, r in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
