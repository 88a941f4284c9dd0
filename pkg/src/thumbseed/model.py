"""End-to-end model: backbone, attention block, and the proposal heads.

The backbone is four stride-2 3×3 conv stages (total stride 16) feeding the
attention block; a 3×3 trunk convolution and two aspect-conditioned 1×1 heads
then emit, at every feature cell, k box offsets against that cell's anchors
and k representativeness scores. Only the two 1×1 heads are adaptive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .adaptive_conv import FilterManifold, adaptive_conv
from .attention import GcaParams, gca_forward, init_gca
from .errors import CheckpointError, InvalidArgumentError
from .geometry import AnchorGrid, BoxCWH, decode_array, generate_anchors
from .tensor import GradTape, Tensor, conv2d, relu
from .util import stream_rng

# Anchor side lengths (pixels) sized for the 160 px synthetic scenes.
DESK_ANCHOR_SCALES = (32.0, 56.0, 96.0)


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyperparameters; the feature resolution is fixed at build time."""

    resolution: int = 160
    stage_channels: tuple[int, ...] = (16, 32, 64, 64)
    gca_hidden: int = 32
    rpn_hidden: int = 128
    anchor_areas: tuple[float, ...] = tuple(s * s for s in DESK_ANCHOR_SCALES)
    fmn_hidden: tuple[int, ...] = (16, 64)
    init_std: float = 0.02

    def __post_init__(self):
        if self.resolution % self.stride != 0:
            raise InvalidArgumentError(
                f"resolution {self.resolution} must be divisible by stride {self.stride}"
            )

    @property
    def stride(self) -> int:
        return 2 ** len(self.stage_channels)

    @property
    def feat_size(self) -> int:
        return self.resolution // self.stride

    @property
    def feat_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def k(self) -> int:
        return len(self.anchor_areas)

    def to_sidecar(self) -> dict[str, str]:
        return {
            "resolution": str(self.resolution),
            "stride": str(self.stride),
            "stage_channels": ",".join(str(c) for c in self.stage_channels),
            "gca_hidden": str(self.gca_hidden),
            "rpn_hidden": str(self.rpn_hidden),
            "k": str(self.k),
            "anchor_areas": ",".join(repr(a) for a in self.anchor_areas),
            "fmn_hidden": ",".join(str(c) for c in self.fmn_hidden),
            "init_std": repr(self.init_std),
        }

    @classmethod
    def from_sidecar(cls, values: dict[str, str]) -> "ModelConfig":
        try:
            cfg = cls(
                resolution=int(values["resolution"]),
                stage_channels=tuple(int(c) for c in values["stage_channels"].split(",")),
                gca_hidden=int(values["gca_hidden"]),
                rpn_hidden=int(values["rpn_hidden"]),
                anchor_areas=tuple(float(a) for a in values["anchor_areas"].split(",")),
                fmn_hidden=tuple(int(c) for c in values["fmn_hidden"].split(",")),
                init_std=float(values["init_std"]),
            )
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"bad model sidecar: {e}") from e
        for key, derived in (("stride", cfg.stride), ("k", cfg.k)):
            if key in values and int(values[key]) != derived:
                raise CheckpointError(
                    f"sidecar {key}={values[key]} inconsistent with derived value {derived}"
                )
        return cfg


# Small everything: used by the gradient self-check.
MICRO_CONFIG = ModelConfig(
    resolution=32,
    stage_channels=(4, 4, 8, 8),
    gca_hidden=8,
    rpn_hidden=16,
    anchor_areas=(8.0**2, 13.0**2, 20.0**2),
    fmn_hidden=(4, 8),
)


@dataclass
class ModelParams:
    """Every learnable tensor, uniquely named via :meth:`named_tensors`."""

    config: ModelConfig
    backbone: list[tuple[Tensor, Tensor]]
    gca: GcaParams
    trunk_kernel: Tensor
    trunk_bias: Tensor
    box_fmn: FilterManifold
    score_fmn: FilterManifold

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (k, b) in enumerate(self.backbone):
            out[f"backbone.{i}.kernel"] = k
            out[f"backbone.{i}.bias"] = b
        for name, lp in (
            ("row_fw", self.gca.row_fw),
            ("row_bw", self.gca.row_bw),
            ("col_fw", self.gca.col_fw),
            ("col_bw", self.gca.col_bw),
        ):
            out[f"gca.{name}.wx"] = lp.wx
            out[f"gca.{name}.wh"] = lp.wh
            out[f"gca.{name}.b"] = lp.b
        out["gca.logit.kernel"] = self.gca.logit_kernel
        out["gca.logit.bias"] = self.gca.logit_bias
        out["trunk.kernel"] = self.trunk_kernel
        out["trunk.bias"] = self.trunk_bias
        out.update(self.box_fmn.named_tensors("box_fmn"))
        out.update(self.score_fmn.named_tensors("score_fmn"))
        return out


def init_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh parameters: zero-mean Gaussian (std ``config.init_std``), zero biases."""
    rng = stream_rng(seed, "init")
    std = config.init_std
    backbone = []
    cin = 3
    for cout in config.stage_channels:
        backbone.append((Tensor(rng.normal(0.0, std, (3, 3, cin, cout))), Tensor(np.zeros(cout))))
        cin = cout
    fs = config.feat_size
    gca = init_gca(rng, config.feat_channels, config.gca_hidden, fs, fs, std)
    trunk_kernel = Tensor(rng.normal(0.0, std, (3, 3, config.feat_channels, config.rpn_hidden)))
    trunk_bias = Tensor(np.zeros(config.rpn_hidden))
    box_fmn = FilterManifold.create(
        rng, (1, 1, config.rpn_hidden, 4 * config.k), config.fmn_hidden, std
    )
    score_fmn = FilterManifold.create(
        rng, (1, 1, config.rpn_hidden, config.k), config.fmn_hidden, std
    )
    return ModelParams(config, backbone, gca, trunk_kernel, trunk_bias, box_fmn, score_fmn)


@dataclass
class RpnOutputs:
    """Per-cell head outputs: deltas H×W×4k (unbounded), scores H×W×k in (0, 1)."""

    deltas: Tensor
    scores: Tensor


def backbone_forward(image: Tensor, params: ModelParams, tape: GradTape | None = None) -> Tensor:
    """Four conv(3×3, stride 2, same) + ReLU stages; output stride 16."""
    cfg = params.config
    expect = (cfg.resolution, cfg.resolution, 3)
    if image.data.shape != expect:
        raise InvalidArgumentError(
            f"model was built for {expect} images, got {image.data.shape}"
        )
    x = image
    for kernel, bias in params.backbone:
        x = relu(conv2d(x, kernel, bias, stride=2, padding="same", tape=tape), tape)
    return x


def rpn_forward(f_attn: Tensor, aspect: float, params: ModelParams,
                tape: GradTape | None = None) -> RpnOutputs:
    """Shared 3×3 trunk, then the two aspect-conditioned 1×1 heads."""
    if aspect <= 0:
        raise InvalidArgumentError(f"aspect ratio must be positive, got {aspect}")
    trunk = relu(
        conv2d(f_attn, params.trunk_kernel, params.trunk_bias, stride=1, padding="same", tape=tape),
        tape,
    )
    deltas = adaptive_conv(trunk, aspect, params.box_fmn, activation="linear", tape=tape)
    scores = adaptive_conv(trunk, aspect, params.score_fmn, activation="sigmoid", tape=tape)
    return RpnOutputs(deltas=deltas, scores=scores)


def model_forward(image: Tensor, aspect: float, params: ModelParams,
                  tape: GradTape | None = None) -> RpnOutputs:
    """Backbone → attention → heads, on the tape when one is given."""
    feats = backbone_forward(image, params, tape)
    attended = gca_forward(feats, params.gca, tape)
    return rpn_forward(attended, aspect, params, tape)


def anchors_for(config: ModelConfig, aspect: float) -> AnchorGrid:
    fs = config.feat_size
    return generate_anchors(fs, fs, config.stride, config.anchor_areas, aspect)


def full_forward(image: Tensor, aspect: float, params: ModelParams) -> list[tuple[BoxCWH, float]]:
    """All H·W·k candidate boxes with scores, row-major with templates fastest."""
    outputs = model_forward(image, aspect, params)
    anchors = anchors_for(params.config, aspect)
    n = len(anchors)
    deltas = outputs.deltas.data.reshape(n, 4).astype(np.float64)
    scores = outputs.scores.data.reshape(n)
    boxes = decode_array(deltas, anchors.boxes)
    return [
        (BoxCWH(*boxes[i]), float(scores[i]))
        for i in range(n)
    ]


def save_model(path, params: ModelParams) -> None:
    """Checkpoint container plus a key=value sidecar at ``<path>.cfg``."""
    ckpt.save_tensors(path, params.named_tensors())
    ckpt.save_sidecar(str(path) + ".cfg", params.config.to_sidecar())


def load_model(path) -> ModelParams:
    """Rebuild a model whose forward outputs are bit-identical to the saved one."""
    config = ModelConfig.from_sidecar(ckpt.load_sidecar(str(path) + ".cfg"))
    params = init_model(config, seed=0)
    named = params.named_tensors()
    stored = ckpt.load_tensors(path)
    if set(stored) != set(named):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise CheckpointError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, t in named.items():
        if stored[name].shape != t.data.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {stored[name].shape}, expected {t.data.shape}"
            )
        t.data = stored[name]
    return params
