"""Aspect-conditioned convolutions with dynamically generated kernels.

A small stack of fully connected layers (widths strictly increasing) maps the
query aspect ratio to the full weight + bias vector of a convolution layer.
The generated kernels vary smoothly with the aspect ratio, which is what lets
a trained model interpolate to ratios never seen during training.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .tensor import GradTape, Tensor, add, conv2d, matmul, narrow, relu, reshape, sigmoid, tanh

# Aspect ratios the stock training data covers; callers may go beyond at
# their own risk (the kernel manifold extrapolates instead of interpolating).
TRAINING_ASPECT_RANGE = (0.5, 2.0)
SUPPORTED_ASPECT_RANGE = (0.1, 10.0)


def encode_side_info(aspect: float) -> np.ndarray:
    """Deterministic network input for an aspect ratio: [a, ln a].

    The ln term makes reciprocal aspects symmetric about zero.
    """
    if aspect <= 0:
        raise InvalidArgumentError(f"aspect ratio must be positive, got {aspect}")
    lo, hi = TRAINING_ASPECT_RANGE
    if not (lo <= aspect <= hi):
        warnings.warn(
            f"aspect ratio {aspect} outside training range [{lo}, {hi}]; "
            "generated kernels are extrapolated",
            stacklevel=2,
        )
    return np.array([aspect, math.log(aspect)], dtype=np.float32)


@dataclass
class FilterManifold:
    """Dense network emitting one convolution kernel + bias per side input.

    ``layers`` holds (weight, bias) pairs; hidden layers use tanh, the output
    layer is linear and its length is pinned to kh·kw·Cin·Cout + Cout.
    """

    kernel_shape: tuple[int, int, int, int]
    hidden_sizes: tuple[int, ...]
    layers: list[tuple[Tensor, Tensor]]

    def __post_init__(self):
        sizes = (2,) + tuple(self.hidden_sizes)
        for prev, cur in zip(sizes, sizes[1:]):
            if cur <= prev:
                raise InvalidArgumentError(
                    f"hidden sizes must strictly increase, got {sizes}"
                )
        kh, kw, cin, cout = self.kernel_shape
        want = kh * kw * cin * cout + cout
        got = self.layers[-1][0].data.shape[1]
        if got != want:
            raise InvalidArgumentError(
                f"output layer emits {got} values; kernel geometry {self.kernel_shape} needs {want}"
            )

    @property
    def output_length(self) -> int:
        kh, kw, cin, cout = self.kernel_shape
        return kh * kw * cin * cout + cout

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        kernel_shape: tuple[int, int, int, int],
        hidden_sizes: tuple[int, ...] = (16, 64),
        init_std: float = 0.02,
        output_scale: float = 0.1,
    ) -> "FilterManifold":
        """Gaussian init; the output layer is shrunk by ``output_scale`` so
        freshly generated kernels start near zero."""
        kh, kw, cin, cout = kernel_shape
        sizes = [2, *hidden_sizes, kh * kw * cin * cout + cout]
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            std = init_std * (output_scale if i == len(sizes) - 2 else 1.0)
            layers.append((Tensor(rng.normal(0.0, std, (n_in, n_out))), Tensor(np.zeros(n_out))))
        return cls(kernel_shape=tuple(kernel_shape), hidden_sizes=tuple(hidden_sizes), layers=layers)

    def named_tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.{i}.w"] = w
            out[f"{prefix}.{i}.b"] = b
        return out


def generate_kernel(fmn: FilterManifold, aspect: float, tape: GradTape | None = None) -> tuple[Tensor, Tensor]:
    """Run the manifold network and reshape its output into (kernel, bias)."""
    h = Tensor(encode_side_info(aspect))
    last = len(fmn.layers) - 1
    for i, (w, b) in enumerate(fmn.layers):
        h = add(matmul(h, w, tape), b, tape)
        if i != last:
            h = tanh(h, tape)
    kh, kw, cin, cout = fmn.kernel_shape
    n = kh * kw * cin * cout
    kernel = reshape(narrow(h, 0, 0, n, tape), (kh, kw, cin, cout), tape)
    bias = narrow(h, 0, n, cout, tape)
    return kernel, bias


_ACTIVATIONS = {
    "linear": lambda t, tape: t,
    "relu": relu,
    "sigmoid": sigmoid,
}


def adaptive_conv(
    x: Tensor,
    aspect: float,
    fmn: FilterManifold,
    activation: str = "linear",
    stride: int = 1,
    padding: str = "same",
    tape: GradTape | None = None,
) -> Tensor:
    """Convolve ``x`` with the kernel generated for ``aspect``, then activate.

    Identical to a plain conv2d with the materialized kernel; gradients flow
    back through the kernel into the manifold network's weights.
    """
    if fmn.kernel_shape[2] != x.data.shape[2]:
        raise InvalidArgumentError(
            f"manifold kernel expects {fmn.kernel_shape[2]} input channels, map has {x.data.shape[2]}"
        )
    if activation not in _ACTIVATIONS:
        raise InvalidArgumentError(f"unknown activation {activation!r}")
    kernel, bias = generate_kernel(fmn, aspect, tape)
    y = conv2d(x, kernel, bias, stride=stride, padding=padding, tape=tape)
    return _ACTIVATIONS[activation](y, tape)


@dataclass(frozen=True)
class SmoothnessReport:
    """Discrete Lipschitz estimate of the kernel manifold over an aspect range."""

    aspects: np.ndarray
    distances: np.ndarray  # ‖kernel(a_{i+1}) − kernel(a_i)‖₂ / (a_{i+1} − a_i)

    @property
    def max_jump(self) -> float:
        return float(self.distances.max())

    @property
    def median_jump(self) -> float:
        return float(np.median(self.distances))


def kernel_smoothness(fmn: FilterManifold, a_lo: float, a_hi: float, n: int) -> SmoothnessReport:
    """Probe kernels at ``n`` log-spaced aspects and report adjacent distances."""
    if not (0 < a_lo < a_hi):
        raise InvalidArgumentError(f"need 0 < a_lo < a_hi, got {a_lo}, {a_hi}")
    if n < 2:
        raise InvalidArgumentError(f"need at least two probe points, got {n}")
    aspects = np.geomspace(a_lo, a_hi, n)
    vecs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for a in aspects:
            kernel, bias = generate_kernel(fmn, float(a))
            vecs.append(np.concatenate([kernel.data.ravel(), bias.data.ravel()]).astype(np.float64))
    dists = np.array([
        np.linalg.norm(vecs[i + 1] - vecs[i]) / (aspects[i + 1] - aspects[i])
        for i in range(n - 1)
    ])
    return SmoothnessReport(aspects=aspects, distances=dists)
