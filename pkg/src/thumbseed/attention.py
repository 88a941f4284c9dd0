"""Global-context attention over a feature map.

Two bidirectional LSTM passes sweep the map (rows first, then columns of the
row result); their outputs are concatenated into a per-location context code.
A 1×1 convolution turns the code into one logit per flattened map position,
softmax normalizes the logits, and each location's output feature is the
attention-weighted sum of every input feature vector. Flattening of map
positions is row-major throughout.

Because the logit depth equals H×W, the module is built for one fixed feature
resolution; feeding a map of any other spatial size is an error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .tensor import (
    GradTape,
    Tensor,
    concat,
    conv2d,
    lstm_step,
    matmul,
    reshape,
    softmax,
    stack,
    take,
)


@dataclass
class LstmParams:
    """Weights for one scan direction: wx (in×4H), wh (H×4H), b (4H)."""

    wx: Tensor
    wh: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.wh.data.shape[0]


@dataclass
class GcaParams:
    """All learnable state of the attention block, tied to one H×W grid."""

    feat_h: int
    feat_w: int
    row_fw: LstmParams
    row_bw: LstmParams
    col_fw: LstmParams
    col_bw: LstmParams
    logit_kernel: Tensor  # 1×1×(4·hidden)×(H·W)
    logit_bias: Tensor


def init_gca(rng: np.random.Generator, channels: int, hidden: int, feat_h: int, feat_w: int,
             init_std: float = 0.02) -> GcaParams:
    def lstm(in_dim):
        return LstmParams(
            wx=Tensor(rng.normal(0.0, init_std, (in_dim, 4 * hidden))),
            wh=Tensor(rng.normal(0.0, init_std, (hidden, 4 * hidden))),
            b=Tensor(np.zeros(4 * hidden)),
        )

    d = feat_h * feat_w
    return GcaParams(
        feat_h=feat_h,
        feat_w=feat_w,
        row_fw=lstm(channels),
        row_bw=lstm(channels),
        col_fw=lstm(2 * hidden),
        col_bw=lstm(2 * hidden),
        logit_kernel=Tensor(rng.normal(0.0, init_std, (1, 1, 4 * hidden, d))),
        logit_bias=Tensor(np.zeros(d)),
    )


def _scan(slices: list[Tensor], fw: LstmParams, bw: LstmParams, batch: int,
          tape: GradTape | None) -> list[Tensor]:
    """Run both directions over a sequence of (batch × C) slices; concat outputs."""
    dtype = slices[0].data.dtype
    n = len(slices)

    def sweep(params: LstmParams, order):
        h = Tensor(np.zeros((batch, params.hidden), dtype=dtype))
        c = Tensor(np.zeros((batch, params.hidden), dtype=dtype))
        outs: dict[int, Tensor] = {}
        for i in order:
            h, c = lstm_step(slices[i], h, c, params.wx, params.wh, params.b, tape)
            outs[i] = h
        return outs

    f_outs = sweep(fw, range(n))
    b_outs = sweep(bw, range(n - 1, -1, -1))
    return [concat([f_outs[i], b_outs[i]], axis=1, tape=tape) for i in range(n)]


def row_scan(x: Tensor, fw: LstmParams, bw: LstmParams, tape: GradTape | None = None) -> Tensor:
    """Scan each row left→right and right→left; output H×W×2·hidden."""
    h, w, _ = x.data.shape
    cols = [take(x, j, axis=1, tape=tape) for j in range(w)]
    merged = _scan(cols, fw, bw, batch=h, tape=tape)
    return stack(merged, axis=1, tape=tape)


def col_scan(x: Tensor, fw: LstmParams, bw: LstmParams, tape: GradTape | None = None) -> Tensor:
    """Scan each column top→bottom and bottom→top; output H×W×2·hidden."""
    h, w, _ = x.data.shape
    rows = [take(x, i, axis=0, tape=tape) for i in range(h)]
    merged = _scan(rows, fw, bw, batch=w, tape=tape)
    return stack(merged, axis=0, tape=tape)


def context_scan(x: Tensor, params: GcaParams, tape: GradTape | None = None) -> Tensor:
    """Row pass, then column pass over the row result; both retained.

    Returns H×W×(4·hidden): the row-pass channels concatenated with the
    column-pass channels.
    """
    if x.data.ndim != 3 or x.data.shape[0] < 1 or x.data.shape[1] < 1:
        raise InvalidArgumentError(f"context_scan needs a nonempty H×W×C map, got {x.data.shape}")
    r = row_scan(x, params.row_fw, params.row_bw, tape)
    c = col_scan(r, params.col_fw, params.col_bw, tape)
    return concat([r, c], axis=2, tape=tape)


def attention_logits(context: Tensor, params: GcaParams, tape: GradTape | None = None) -> Tensor:
    """1×1 convolution mapping the context code to H·W logits per location."""
    h, w = context.data.shape[:2]
    if (h, w) != (params.feat_h, params.feat_w):
        raise InvalidArgumentError(
            f"attention block was built for {params.feat_h}×{params.feat_w}, got {h}×{w}"
        )
    return conv2d(context, params.logit_kernel, params.logit_bias, stride=1, padding="same", tape=tape)


def aggregate(features: Tensor, logits: Tensor, tape: GradTape | None = None) -> Tensor:
    """Softmax the per-location logits and mix all feature vectors accordingly.

    Every output location is a convex combination of the flattened input
    feature vectors, so outputs stay inside the per-channel input range.
    """
    h, w, c = features.data.shape
    if logits.data.shape[:2] != (h, w):
        raise InvalidArgumentError(
            f"logits spatial shape {logits.data.shape[:2]} does not match features {(h, w)}"
        )
    d = h * w
    if logits.data.shape[2] != d:
        raise InvalidArgumentError(f"logit depth {logits.data.shape[2]} must equal H·W = {d}")
    weights = softmax(logits, tape=tape, axis=-1)
    flat_w = reshape(weights, (d, d), tape)
    flat_f = reshape(features, (d, c), tape)
    mixed = matmul(flat_w, flat_f, tape)
    return reshape(mixed, (h, w, c), tape)


def gca_forward(features: Tensor, params: GcaParams, tape: GradTape | None = None) -> Tensor:
    """Full attention block: scans → logits → softmax-weighted aggregation."""
    ctx = context_scan(features, params, tape)
    z = attention_logits(ctx, params, tape)
    return aggregate(features, z, tape)
