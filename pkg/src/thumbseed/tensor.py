"""N-dimensional float tensors with reverse-mode differentiation.

All model math runs on 32-bit-float numpy arrays wrapped in :class:`Tensor`.
Differentiable operations optionally record their adjoint rule on an explicit
:class:`GradTape`; :func:`backward` replays the tape in reverse, accumulating
gradients into ``Tensor.grad``. Calling the same operations with ``tape=None``
runs them forward-only, which is how inference works.

Tensors are treated as immutable values once created. The one sanctioned
exception is the optimizer, which updates parameter ``.data`` in place while
holding exclusive access, and :func:`grad_check`, which perturbs parameter
entries one at a time and restores them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolationError, InvalidArgumentError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "grad_or_zero",
    "zero_grads",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "tensor_sum",
    "reshape",
    "concat",
    "stack",
    "take",
    "narrow",
    "gather0",
    "conv2d",
    "bilinear_resize",
    "lstm_step",
    "bce_elems",
    "smooth_l1_elems",
    "grad_check",
]


class Tensor:
    """Shape-carrying float array. ``grad`` is filled in by :func:`backward`."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _wrap(arr: np.ndarray) -> Tensor:
    # Internal: wrap an op result without casting, so float64 verification
    # runs stay float64 end to end.
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.grad = None
    return t


def grad_or_zero(t: Tensor) -> np.ndarray:
    """Gradient of ``t``, with off-path tensors reporting exact zero."""
    if t.grad is None:
        return np.zeros_like(t.data)
    return t.grad


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


BackwardFn = Callable[[np.ndarray], tuple]


class GradTape:
    """Ordered record of executed ops, replayed in reverse by :func:`backward`.

    Each record holds the output tensor, the input tensors, and a closure
    mapping the output adjoint to one adjoint (or None) per input. Because
    records are appended in execution order, reversed order is a valid
    topological order of the computation.
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> None:
        self._records.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._records)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def backward(loss: Tensor, tape: GradTape) -> None:
    """Replay ``tape`` in reverse from scalar ``loss``, filling ``.grad``."""
    if loss.data.size != 1:
        raise InvalidArgumentError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is not None:
                _accumulate(t, gi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    out = _wrap(a.data + b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return out


def sub(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    out = _wrap(a.data - b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))
    return out


def mul(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    out = _wrap(a.data * b.data)
    if tape is not None:
        tape.record(
            out,
            (a, b),
            lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
        )
    return out


def scale(a: Tensor, c: float, tape: GradTape | None = None) -> Tensor:
    out = _wrap(a.data * c)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * c,))
    return out


def matmul(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise InvalidArgumentError("matmul supports 1-D and 2-D operands only")
    if ad.shape[-1] != bd.shape[0]:
        raise InvalidArgumentError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = _wrap(ad @ bd)

    if tape is not None:

        def backward_fn(g):
            if ad.ndim == 1 and bd.ndim == 2:
                return g @ bd.T, np.outer(ad, g)
            if ad.ndim == 2 and bd.ndim == 2:
                return g @ bd.T, ad.T @ g
            if ad.ndim == 2 and bd.ndim == 1:
                return np.outer(g, bd), ad.T @ g
            return g * bd, g * ad

        tape.record(out, (a, b), backward_fn)
    return out


def _relu_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (x > 0)


def relu(a: Tensor, tape: GradTape | None = None) -> Tensor:
    out = _wrap(np.maximum(a.data, 0))
    if tape is not None:
        x = a.data
        tape.record(out, (a,), lambda g: (_relu_grad(x, g),))
    return out


def _sigmoid_grad(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * y * (1.0 - y)


def sigmoid(a: Tensor, tape: GradTape | None = None) -> Tensor:
    x = a.data
    # Evaluate each branch only where it is stable to avoid exp overflow.
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _wrap(y)
    if tape is not None:
        tape.record(out, (a,), lambda g: (_sigmoid_grad(y, g),))
    return out


def _tanh_grad(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (1.0 - y * y)


def tanh(a: Tensor, tape: GradTape | None = None) -> Tensor:
    y = np.tanh(a.data)
    out = _wrap(y)
    if tape is not None:
        tape.record(out, (a,), lambda g: (_tanh_grad(y, g),))
    return out


def softmax(a: Tensor, tape: GradTape | None = None, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if a.data.size == 0 or a.data.shape[axis] == 0:
        raise InvalidArgumentError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _wrap(y)
    if tape is not None:

        def backward_fn(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        tape.record(out, (a,), backward_fn)
    return out


def tensor_sum(a: Tensor, tape: GradTape | None = None) -> Tensor:
    out = _wrap(np.asarray(a.data.sum(), dtype=a.data.dtype))
    if tape is not None:
        shape = a.data.shape
        tape.record(out, (a,), lambda g: (np.broadcast_to(g, shape),))
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape, tape: GradTape | None = None) -> Tensor:
    out = _wrap(a.data.reshape(shape))
    if tape is not None:
        orig = a.data.shape
        tape.record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def concat(tensors: Sequence[Tensor], axis: int, tape: GradTape | None = None) -> Tensor:
    out = _wrap(np.concatenate([t.data for t in tensors], axis=axis))
    if tape is not None:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward_fn(g):
            g = np.moveaxis(g, axis, 0)
            return tuple(np.moveaxis(g[offsets[i]:offsets[i + 1]], 0, axis) for i in range(len(sizes)))

        tape.record(out, tuple(tensors), backward_fn)
    return out


def stack(tensors: Sequence[Tensor], axis: int, tape: GradTape | None = None) -> Tensor:
    out = _wrap(np.stack([t.data for t in tensors], axis=axis))
    if tape is not None:
        n = len(tensors)

        def backward_fn(g):
            return tuple(np.take(g, i, axis=axis) for i in range(n))

        tape.record(out, tuple(tensors), backward_fn)
    return out


def take(a: Tensor, index: int, axis: int, tape: GradTape | None = None) -> Tensor:
    """Select the subarray at ``index`` along ``axis`` (the axis is dropped)."""
    out = _wrap(np.take(a.data, index, axis=axis))
    if tape is not None:
        shape, dtype = a.data.shape, a.data.dtype
        ax = axis % a.data.ndim

        def backward_fn(g):
            z = np.zeros(shape, dtype=dtype)
            sl = [slice(None)] * len(shape)
            sl[ax] = index
            z[tuple(sl)] = g
            return (z,)

        tape.record(out, (a,), backward_fn)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int, tape: GradTape | None = None) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    ax = axis % a.data.ndim
    sl = [slice(None)] * a.data.ndim
    sl[ax] = slice(start, start + length)
    out = _wrap(a.data[tuple(sl)])
    if tape is not None:
        shape, dtype = a.data.shape, a.data.dtype

        def backward_fn(g):
            z = np.zeros(shape, dtype=dtype)
            z[tuple(sl)] = g
            return (z,)

        tape.record(out, (a,), backward_fn)
    return out


def gather0(a: Tensor, indices: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Gather rows (axis 0) at ``indices``; scatter-adds on the way back."""
    idx = np.asarray(indices, dtype=np.int64)
    out = _wrap(a.data[idx])
    if tape is not None:
        shape, dtype = a.data.shape, a.data.dtype

        def backward_fn(g):
            z = np.zeros(shape, dtype=dtype)
            np.add.at(z, idx, g)
            return (z,)

        tape.record(out, (a,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# convolution


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: str = "same",
    tape: GradTape | None = None,
) -> Tensor:
    """2-D cross-correlation of an H×W×Cin map with a kh×kw×Cin×Cout kernel.

    ``padding="same"`` with stride 1 preserves the spatial shape; stride s
    yields ceil(H/s) rows. Implemented as patch extraction plus one matmul,
    so the adjoint is a matmul plus a patch scatter.
    """
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"conv2d input must be H×W×C, got shape {x.data.shape}")
    if kernel.data.ndim != 4:
        raise InvalidArgumentError(f"conv2d kernel must be kh×kw×Cin×Cout, got shape {kernel.data.shape}")
    kh, kw, cin, cout = kernel.data.shape
    if cin != x.data.shape[2]:
        raise InvalidArgumentError(
            f"kernel depth {cin} does not match input channels {x.data.shape[2]}"
        )
    if bias.data.shape != (cout,):
        raise InvalidArgumentError(f"bias must have shape ({cout},), got {bias.data.shape}")
    if not isinstance(stride, int) or stride < 1:
        raise InvalidArgumentError(f"stride must be a positive integer, got {stride!r}")
    h, w, _ = x.data.shape

    if padding == "same":
        out_h, pt, pb = _same_pads(h, kh, stride)
        out_w, pl, pr = _same_pads(w, kw, stride)
    elif padding == "valid":
        if h < kh or w < kw:
            raise InvalidArgumentError("valid padding requires input at least as large as the kernel")
        out_h, pt, pb = (h - kh) // stride + 1, 0, 0
        out_w, pl, pr = (w - kw) // stride + 1, 0, 0
    else:
        raise InvalidArgumentError(f"padding must be 'same' or 'valid', got {padding!r}")

    padded = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
    cols = np.empty((out_h * out_w, kh * kw * cin), dtype=x.data.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = padded[dy : dy + (out_h - 1) * stride + 1 : stride,
                           dx : dx + (out_w - 1) * stride + 1 : stride, :]
            cols[:, (dy * kw + dx) * cin : (dy * kw + dx + 1) * cin] = patch.reshape(-1, cin)
    k2 = kernel.data.reshape(-1, cout)
    out2 = cols @ k2 + bias.data
    out = _wrap(out2.reshape(out_h, out_w, cout))

    if tape is not None:
        padded_shape = padded.shape
        x_dtype = x.data.dtype

        def backward_fn(g):
            g2 = g.reshape(-1, cout)
            g_bias = g2.sum(axis=0)
            g_kernel = (cols.T @ g2).reshape(kh, kw, cin, cout)
            g_cols = g2 @ k2.T
            g_padded = np.zeros(padded_shape, dtype=x_dtype)
            for dy in range(kh):
                for dx in range(kw):
                    block = g_cols[:, (dy * kw + dx) * cin : (dy * kw + dx + 1) * cin]
                    g_padded[dy : dy + (out_h - 1) * stride + 1 : stride,
                             dx : dx + (out_w - 1) * stride + 1 : stride, :] += block.reshape(
                        out_h, out_w, cin
                    )
            g_x = g_padded[pt : pt + h, pl : pl + w, :]
            return g_x, g_kernel, g_bias

        tape.record(out, (x, kernel, bias), backward_fn)
    return out


# ---------------------------------------------------------------------------
# resampling


def _resize_coords(n_in: int, n_out: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0).astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int, tape: GradTape | None = None) -> Tensor:
    """Resample H×W×C to out_h×out_w×C (half-pixel-center convention)."""
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"bilinear_resize input must be H×W×C, got shape {x.data.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"target size must be positive, got {out_h}×{out_w}")
    h, w, _ = x.data.shape
    r0, r1, wr = _resize_coords(h, out_h, x.data.dtype)
    c0, c1, wc = _resize_coords(w, out_w, x.data.dtype)
    wr_ = wr[:, None, None]
    wc_ = wc[None, :, None]
    d = x.data
    top = (1 - wc_) * d[np.ix_(r0, c0)] + wc_ * d[np.ix_(r0, c1)]
    bot = (1 - wc_) * d[np.ix_(r1, c0)] + wc_ * d[np.ix_(r1, c1)]
    out = _wrap((1 - wr_) * top + wr_ * bot)

    if tape is not None:
        shape, dtype = x.data.shape, x.data.dtype

        def backward_fn(g):
            z = np.zeros(shape, dtype=dtype)
            np.add.at(z, (r0[:, None], c0[None, :]), (1 - wr_) * (1 - wc_) * g)
            np.add.at(z, (r0[:, None], c1[None, :]), (1 - wr_) * wc_ * g)
            np.add.at(z, (r1[:, None], c0[None, :]), wr_ * (1 - wc_) * g)
            np.add.at(z, (r1[:, None], c1[None, :]), wr_ * wc_ * g)
            return (z,)

        tape.record(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# recurrent step


def lstm_step(
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
    tape: GradTape | None = None,
) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; gate blocks are ordered (input, forget, cell, output).

    ``x`` may be a single vector or a batch of independent sequences stacked
    on axis 0 (used to scan all rows of a feature map at once). Weight layout:
    ``wx`` is in_dim×4H, ``wh`` is H×4H, ``b`` is 4H.
    """
    if wx.data.ndim != 2 or wh.data.ndim != 2:
        raise InvalidArgumentError("lstm_step weights must be 2-D")
    hidden = wh.data.shape[0]
    if wx.data.shape[1] != 4 * hidden or wh.data.shape[1] != 4 * hidden or b.data.shape != (4 * hidden,):
        raise InvalidArgumentError("lstm_step weight/bias shapes inconsistent with hidden size")
    if x.data.shape[-1] != wx.data.shape[0]:
        raise InvalidArgumentError(
            f"lstm_step input size {x.data.shape[-1]} does not match weight rows {wx.data.shape[0]}"
        )
    if h_prev.data.shape[-1] != hidden or c_prev.data.shape[-1] != hidden:
        raise InvalidArgumentError("lstm_step state size does not match hidden size")

    pre = add(add(matmul(x, wx, tape), matmul(h_prev, wh, tape), tape), b, tape)
    i = sigmoid(narrow(pre, -1, 0, hidden, tape), tape)
    f = sigmoid(narrow(pre, -1, hidden, hidden, tape), tape)
    g = tanh(narrow(pre, -1, 2 * hidden, hidden, tape), tape)
    o = sigmoid(narrow(pre, -1, 3 * hidden, hidden, tape), tape)
    c = add(mul(f, c_prev, tape), mul(i, g, tape), tape)
    h = mul(o, tanh(c, tape), tape)
    return h, c


# ---------------------------------------------------------------------------
# loss kernels

_BCE_EPS = 1e-7


def bce_elems(p: Tensor, labels: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Elementwise binary cross entropy against constant 0/1 labels."""
    y = np.asarray(labels, dtype=p.data.dtype)
    if y.shape != p.data.shape:
        raise InvalidArgumentError(f"labels shape {y.shape} does not match predictions {p.data.shape}")
    pc = np.clip(p.data, _BCE_EPS, 1.0 - _BCE_EPS)
    out = _wrap(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))
    if tape is not None:
        inside = (p.data > _BCE_EPS) & (p.data < 1.0 - _BCE_EPS)

        def backward_fn(g):
            return (g * inside * (-y / pc + (1.0 - y) / (1.0 - pc)),)

        tape.record(out, (p,), backward_fn)
    return out


def smooth_l1_elems(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """Elementwise smooth-L1: quadratic below |x|=1, linear above."""
    d = x.data
    ad = np.abs(d)
    out = _wrap(np.where(ad < 1.0, 0.5 * d * d, ad - 0.5))
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * np.where(ad < 1.0, d, np.sign(d)),))
    return out


# ---------------------------------------------------------------------------
# verification


def grad_check(
    forward_fn: Callable[[GradTape | None], Tensor],
    params: dict[str, Tensor],
    epsilon: float = 1e-3,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    dtype=np.float64,
) -> dict[str, float]:
    """Compare tape gradients against central finite differences.

    ``forward_fn(tape)`` must rebuild the computation from ``params`` and
    return the scalar loss; it is called with ``tape=None`` for the numeric
    evaluations. Parameters are temporarily promoted to ``dtype`` (float64 by
    default) so the difference quotient is not drowned by rounding, then
    restored bit-exactly. Relative error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``; the returned
    mapping holds the per-parameter maximum. When ``samples_per_param`` is
    set, at most that many coordinates per tensor are checked (seeded draw),
    otherwise every coordinate is.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    originals = {name: p.data for name, p in params.items()}
    try:
        for p in params.values():
            p.data = p.data.astype(dtype)

        l0 = float(forward_fn(None).data)
        l1 = float(forward_fn(None).data)
        if l0 != l1:
            raise ContractViolationError(
                f"forward function is not deterministic: {l0!r} != {l1!r}"
            )

        tape = GradTape()
        loss = forward_fn(tape)
        backward(loss, tape)
        analytic = {name: grad_or_zero(p).copy() for name, p in params.items()}
        zero_grads(params.values())

        errors: dict[str, float] = {}
        for name, p in params.items():
            flat = p.data.reshape(-1)
            n = flat.size
            if samples_per_param is not None and n > samples_per_param:
                coords = rng.choice(n, size=samples_per_param, replace=False)
            else:
                coords = np.arange(n)
            worst = 0.0
            a_flat = analytic[name].reshape(-1)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + epsilon
                f_plus = float(forward_fn(None).data)
                flat[c] = orig - epsilon
                f_minus = float(forward_fn(None).data)
                flat[c] = orig
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                a = float(a_flat[c])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                if rel > worst:
                    worst = rel
            errors[name] = worst
        return errors
    finally:
        for name, p in params.items():
            p.data = originals[name]
        zero_grads(params.values())
