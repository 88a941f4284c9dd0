"""Finite-difference verification of every differentiable building block.

Each named check builds a small random instance of one component, defines a
scalar loss over it, and compares tape gradients against central finite
differences via :func:`thumbseed.tensor.grad_check`. The final check drives
the full micro model (32 px input, 8 feature channels, 16 trunk channels,
k = 3) end to end through target assignment and the combined loss, so the
attention LSTMs and both kernel-generator heads are exercised together.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .adaptive_conv import FilterManifold, adaptive_conv
from .attention import gca_forward, init_gca
from .geometry import BoxCWH
from .model import MICRO_CONFIG, anchors_for, init_model, model_forward
from .tensor import (
    Tensor,
    bilinear_resize,
    conv2d,
    grad_check,
    lstm_step,
    mul,
    softmax,
    tensor_sum,
)
from .training import assign_targets, sample_minibatch, total_loss
from .util import stream_rng

TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_error: float
    worst_param: str
    passed: bool
    elapsed: float
    errors: dict[str, float]


def _squared_sum(t, tape):
    return tensor_sum(mul(t, t, tape), tape)


def _check_conv2d(rng):
    params = {
        "x": Tensor(rng.normal(0, 1, (5, 4, 2))),
        "kernel": Tensor(rng.normal(0, 0.5, (3, 3, 2, 3))),
        "bias": Tensor(rng.normal(0, 0.5, 3)),
    }

    def forward(tape):
        y = conv2d(params["x"], params["kernel"], params["bias"], stride=1, padding="same", tape=tape)
        return _squared_sum(y, tape)

    return forward, params


def _check_softmax(rng):
    params = {"logits": Tensor(rng.normal(0, 2, 7))}
    weights = Tensor(rng.normal(0, 1, 7))

    def forward(tape):
        return tensor_sum(mul(softmax(params["logits"], tape), weights, tape), tape)

    return forward, params


def _check_lstm_step(rng):
    hidden = 4
    params = {
        "x": Tensor(rng.normal(0, 1, 3)),
        "h0": Tensor(rng.normal(0, 1, hidden)),
        "c0": Tensor(rng.normal(0, 1, hidden)),
        "wx": Tensor(rng.normal(0, 0.5, (3, 4 * hidden))),
        "wh": Tensor(rng.normal(0, 0.5, (hidden, 4 * hidden))),
        "b": Tensor(rng.normal(0, 0.5, 4 * hidden)),
    }

    def forward(tape):
        h, c = lstm_step(params["x"], params["h0"], params["c0"],
                         params["wx"], params["wh"], params["b"], tape)
        return tensor_sum(mul(h, c, tape), tape)

    return forward, params


def _check_bilinear_resize(rng):
    params = {"x": Tensor(rng.normal(0, 1, (3, 4, 2)))}
    weights = Tensor(rng.normal(0, 1, (5, 3, 2)))

    def forward(tape):
        return tensor_sum(mul(bilinear_resize(params["x"], 5, 3, tape), weights, tape), tape)

    return forward, params


def _check_attention(rng):
    gca = init_gca(rng, channels=3, hidden=2, feat_h=4, feat_w=4, init_std=0.3)
    x = Tensor(rng.normal(0, 1, (4, 4, 3)))
    params = {"x": x}
    for name, lp in (("row_fw", gca.row_fw), ("row_bw", gca.row_bw),
                     ("col_fw", gca.col_fw), ("col_bw", gca.col_bw)):
        params[f"{name}.wx"] = lp.wx
        params[f"{name}.wh"] = lp.wh
        params[f"{name}.b"] = lp.b
    params["logit.kernel"] = gca.logit_kernel
    params["logit.bias"] = gca.logit_bias

    def forward(tape):
        return _squared_sum(gca_forward(x, gca, tape), tape)

    return forward, params


def _check_adaptive_conv(rng):
    fmn = FilterManifold.create(rng, (1, 1, 3, 2), hidden_sizes=(4, 8), init_std=0.4, output_scale=1.0)
    x = Tensor(rng.normal(0, 1, (4, 4, 3)))
    params = dict(fmn.named_tensors("fmn"))
    params["x"] = x

    def forward(tape):
        return _squared_sum(adaptive_conv(x, 1.3, fmn, activation="relu", tape=tape), tape)

    return forward, params


def _check_full_model(rng):
    # The probe point needs ReLU arguments well clear of the finite-difference
    # step; the tiny training init would park them at ~1e-3, right on the kink.
    cfg = replace(MICRO_CONFIG, init_std=0.3)
    model = init_model(cfg, seed=12)
    image = Tensor(rng.uniform(0, 1, (cfg.resolution, cfg.resolution, 3)))
    aspect = 1.3
    gt = BoxCWH(14.0, 17.0, 13.0, 10.0)
    anchors = anchors_for(cfg, aspect)
    assignment = assign_targets(anchors, gt)
    batch = sample_minibatch(assignment, size=8, rng=np.random.default_rng(3))
    params = model.named_tensors()

    def forward(tape):
        outputs = model_forward(image, aspect, model, tape)
        return total_loss(batch, outputs, assignment, lam=10.0, tape=tape).loss

    return forward, params


_CHECKS = [
    ("conv2d", _check_conv2d),
    ("softmax", _check_softmax),
    ("lstm_step", _check_lstm_step),
    ("bilinear_resize", _check_bilinear_resize),
    ("attention", _check_attention),
    ("adaptive_conv", _check_adaptive_conv),
    ("full_model", _check_full_model),
]


def run_selfcheck(seed: int = 0, samples_per_param: int = 25,
                  epsilon: float = 1e-3) -> list[CheckResult]:
    """Run every named check; a result is green when max error < 1e-3."""
    results = []
    for name, builder in _CHECKS:
        rng = stream_rng(seed, "selfcheck", name)
        forward, params = builder(rng)
        started = time.perf_counter()
        errors = grad_check(
            forward, params, epsilon=epsilon,
            samples_per_param=samples_per_param,
            rng=stream_rng(seed, "selfcheck-coords", name),
        )
        elapsed = time.perf_counter() - started
        worst = max(errors, key=errors.get)
        results.append(CheckResult(
            name=name,
            max_error=errors[worst],
            worst_param=worst,
            passed=errors[worst] < TOLERANCE,
            elapsed=elapsed,
            errors=errors,
        ))
    return results
