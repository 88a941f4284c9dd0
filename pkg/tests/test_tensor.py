import numpy as np
import pytest

from thumbseed.errors import ContractViolationError, InvalidArgumentError
from thumbseed.tensor import (
    GradTape,
    Tensor,
    backward,
    bce_elems,
    bilinear_resize,
    concat,
    conv2d,
    gather0,
    grad_check,
    grad_or_zero,
    lstm_step,
    matmul,
    mul,
    narrow,
    relu,
    reshape,
    sigmoid,
    smooth_l1_elems,
    softmax,
    stack,
    take,
    tanh,
    tensor_sum,
)


def conv2d_reference(x, kernel, bias, stride, padding):
    """Direct-summation oracle: loops over every output element."""
    kh, kw, cin, cout = kernel.shape
    h, w, _ = x.shape
    if padding == "same":
        out_h = -(-h // stride)
        out_w = -(-w // stride)
        pad_h = max((out_h - 1) * stride + kh - h, 0)
        pad_w = max((out_w - 1) * stride + kw - w, 0)
        pt, pl = pad_h // 2, pad_w // 2
    else:
        out_h = (h - kh) // stride + 1
        out_w = (w - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((out_h, out_w, cout))
    for oy in range(out_h):
        for ox in range(out_w):
            for c in range(cout):
                acc = 0.0
                for dy in range(kh):
                    for dx in range(kw):
                        iy = oy * stride + dy - pt
                        ix = ox * stride + dx - pl
                        if 0 <= iy < h and 0 <= ix < w:
                            acc += float(np.dot(x[iy, ix], kernel[dy, dx, :, c]))
                out[oy, ox, c] = acc + bias[c]
    return out


class TestConv2d:
    def test_identity_1x1(self):
        x = Tensor(np.random.default_rng(0).normal(0, 1, (4, 5, 1)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        y = conv2d(x, k, b)
        np.testing.assert_allclose(y.data, x.data)

    def test_zero_kernel_gives_bias(self):
        x = Tensor(np.random.default_rng(1).normal(0, 1, (3, 3, 2)))
        k = Tensor(np.zeros((3, 3, 2, 4)))
        b = Tensor([1.0, -2.0, 0.5, 3.0])
        y = conv2d(x, k, b)
        for c in range(4):
            np.testing.assert_allclose(y.data[:, :, c], b.data[c])

    def test_ones_kernel_constant_input(self):
        # 3×3 ones on constant 1.0, same padding: interior 9, corners 4.
        x = Tensor(np.ones((5, 5, 1)))
        k = Tensor(np.ones((3, 3, 1, 1)))
        y = conv2d(x, k, Tensor(np.zeros(1)))
        assert y.data[2, 2, 0] == pytest.approx(9.0)
        assert y.data[0, 0, 0] == pytest.approx(4.0)
        assert y.data[0, 4, 0] == pytest.approx(4.0)
        assert y.data[0, 2, 0] == pytest.approx(6.0)

    @pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid"), (2, "valid")])
    def test_matches_direct_summation(self, stride, padding):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(0, 1, (6, 5, 3)))
        k = Tensor(rng.normal(0, 1, (3, 3, 3, 2)))
        b = Tensor(rng.normal(0, 1, 2))
        got = conv2d(x, k, b, stride=stride, padding=padding)
        want = conv2d_reference(x.data, k.data, b.data, stride, padding)
        np.testing.assert_allclose(got.data, want, rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("ksize", [1, 3])
    def test_same_stride1_preserves_shape(self, ksize):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(0, 1, (7, 4, 2)))
        k = Tensor(rng.normal(0, 1, (ksize, ksize, 2, 5)))
        y = conv2d(x, k, Tensor(np.zeros(5)), stride=1, padding="same")
        assert y.shape == (7, 4, 5)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((4, 4, 3)))
        k = Tensor(np.zeros((3, 3, 2, 1)))
        with pytest.raises(InvalidArgumentError):
            conv2d(x, k, Tensor(np.zeros(1)))

    def test_bad_stride_rejected(self):
        x = Tensor(np.zeros((4, 4, 1)))
        k = Tensor(np.zeros((1, 1, 1, 1)))
        with pytest.raises(InvalidArgumentError):
            conv2d(x, k, Tensor(np.zeros(1)), stride=0)


class TestSoftmax:
    def test_uniform_logits(self):
        for v in (0.0, 3.5, -100.0):
            y = softmax(Tensor(np.full(6, v)))
            np.testing.assert_allclose(y.data, 1 / 6, rtol=1e-6)

    def test_closed_form_ratio(self):
        y = softmax(Tensor([0.0, np.log(2.0)]))
        np.testing.assert_allclose(y.data, [1 / 3, 2 / 3], rtol=1e-6)

    def test_shift_invariance_and_normalization(self):
        # Shifts stay below 8 so float32 quantization of the shifted logits
        # sits under the 1e-6 comparison tolerance.
        rng = np.random.default_rng(3)
        for _ in range(100):
            logits = rng.normal(0, 5, rng.integers(1, 12))
            y = softmax(Tensor(logits))
            y_shift = softmax(Tensor(logits + rng.uniform(-8, 8)))
            assert abs(float(y.data.sum()) - 1.0) < 1e-6
            assert np.all(y.data >= 0)
            np.testing.assert_allclose(y.data, y_shift.data, atol=1e-6)

    def test_extreme_logits_stay_finite(self):
        y = softmax(Tensor([1000.0, 0.0, -1000.0]))
        assert np.all(np.isfinite(y.data))

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            softmax(Tensor(np.zeros(0)))


class TestLstmStep:
    def zero_params(self, in_dim, hidden):
        return (
            Tensor(np.zeros((in_dim, 4 * hidden))),
            Tensor(np.zeros((hidden, 4 * hidden))),
            Tensor(np.zeros(4 * hidden)),
        )

    def test_all_zero_weights(self):
        # Gates land at 0.5, candidate at tanh(0)=0: both outputs stay zero.
        wx, wh, b = self.zero_params(3, 4)
        h, c = lstm_step(Tensor([1.0, -2.0, 0.3]), Tensor(np.zeros(4)), Tensor(np.zeros(4)), wx, wh, b)
        np.testing.assert_allclose(h.data, 0.0)
        np.testing.assert_allclose(c.data, 0.0)

    def test_forget_gate_saturation(self):
        hidden = 3
        wx, wh, b = self.zero_params(2, hidden)
        b.data[hidden : 2 * hidden] = 15.0  # forget-gate block
        c_prev = Tensor([0.7, -0.4, 0.2])
        _, c = lstm_step(Tensor([1.0, 1.0]), Tensor(np.zeros(hidden)), c_prev, wx, wh, b)
        np.testing.assert_allclose(c.data, c_prev.data, atol=1e-3)

    def test_output_shapes(self):
        rng = np.random.default_rng(4)
        wx = Tensor(rng.normal(0, 1, (5, 8)))
        wh = Tensor(rng.normal(0, 1, (2, 8)))
        b = Tensor(rng.normal(0, 1, 8))
        h, c = lstm_step(Tensor(rng.normal(0, 1, 5)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), wx, wh, b)
        assert h.shape == (2,)
        assert c.shape == (2,)

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(5)
        wx = Tensor(rng.normal(0, 1, (3, 8)))
        wh = Tensor(rng.normal(0, 1, (2, 8)))
        b = Tensor(rng.normal(0, 1, 8))
        xs = rng.normal(0, 1, (4, 3)).astype(np.float32)
        hb, cb = lstm_step(Tensor(xs), Tensor(np.zeros((4, 2))), Tensor(np.zeros((4, 2))), wx, wh, b)
        for i in range(4):
            hi, ci = lstm_step(Tensor(xs[i]), Tensor(np.zeros(2)), Tensor(np.zeros(2)), wx, wh, b)
            np.testing.assert_allclose(hb.data[i], hi.data, rtol=1e-6, atol=1e-7)
            np.testing.assert_allclose(cb.data[i], ci.data, rtol=1e-6, atol=1e-7)

    def test_dimension_mismatch_rejected(self):
        wx, wh, b = self.zero_params(3, 4)
        with pytest.raises(InvalidArgumentError):
            lstm_step(Tensor(np.zeros(5)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), wx, wh, b)
        with pytest.raises(InvalidArgumentError):
            lstm_step(Tensor(np.zeros(3)), Tensor(np.zeros(2)), Tensor(np.zeros(4)), wx, wh, b)


class TestBilinearResize:
    def test_identity_size(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.uniform(0, 1, (5, 7, 3)))
        y = bilinear_resize(x, 5, 7)
        np.testing.assert_allclose(y.data, x.data, atol=1e-6)

    def test_constant_image(self):
        x = Tensor(np.full((4, 4, 2), 0.37))
        y = bilinear_resize(x, 9, 3)
        np.testing.assert_allclose(y.data, 0.37, rtol=1e-6)

    def test_row_upsample_hand_case(self):
        x = Tensor(np.array([[[0.0], [1.0]]]))
        y = bilinear_resize(x, 1, 4)
        np.testing.assert_allclose(y.data[0, :, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-6)

    def test_bounded_by_input_range(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.uniform(-3, 3, (rng.integers(1, 7), rng.integers(1, 7), 2)).astype(np.float32)
            y = bilinear_resize(Tensor(x), rng.integers(1, 9), rng.integers(1, 9))
            assert y.data.min() >= x.min() - 1e-5
            assert y.data.max() <= x.max() + 1e-5

    def test_bad_size_rejected(self):
        with pytest.raises(InvalidArgumentError):
            bilinear_resize(Tensor(np.zeros((2, 2, 1))), 0, 4)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, -2.0, 3.0])
        tape = GradTape()
        loss = tensor_sum(mul(x, x, tape), tape)
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)

    def test_disconnected_parameter_zero_grad(self):
        x = Tensor([1.0, 2.0])
        unused = Tensor([5.0])
        tape = GradTape()
        loss = tensor_sum(mul(x, x, tape), tape)
        backward(loss, tape)
        assert unused.grad is None
        np.testing.assert_allclose(grad_or_zero(unused), 0.0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0])
        tape = GradTape()
        y = mul(x, x, tape)
        with pytest.raises(InvalidArgumentError):
            backward(y, tape)

    def test_shared_input_accumulates(self):
        x = Tensor([2.0])
        tape = GradTape()
        # loss = x*x + x  → d/dx = 2x + 1 = 5
        loss = tensor_sum(concat([mul(x, x, tape), x], axis=0, tape=tape), tape)
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [5.0])

    def test_composite_graph_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        params = {
            "w": Tensor(rng.normal(0, 1, (3, 4))),
            "b": Tensor(rng.normal(0, 1, 4)),
            "x": Tensor(rng.normal(0, 1, 3)),
        }

        def forward(tape):
            y = tanh(matmul(params["x"], params["w"], tape), tape)
            y = sigmoid(concat([y, relu(y, tape)], axis=0, tape=tape), tape)
            picked = gather0(y, np.array([0, 2, 5]), tape)
            return tensor_sum(mul(picked, picked, tape), tape)

        # Truncation error of central differences is O(epsilon²) ≈ 1e-6 for
        # smooth non-quadratic functions; 1e-5 leaves just rounding headroom.
        errs = grad_check(forward, params)
        assert max(errs.values()) < 1e-5


class TestShapeOps:
    def test_take_and_stack_roundtrip(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(0, 1, (3, 4, 2)))
        cols = [take(x, j, axis=1) for j in range(4)]
        back = stack(cols, axis=1)
        np.testing.assert_allclose(back.data, x.data)

    def test_narrow_grad_scatter(self):
        x = Tensor(np.arange(6.0))
        tape = GradTape()
        y = narrow(x, 0, 2, 3, tape)
        loss = tensor_sum(y, tape)
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [0, 0, 1, 1, 1, 0])

    def test_reshape_grad(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        tape = GradTape()
        loss = tensor_sum(mul(reshape(x, (6,), tape), reshape(x, (6,), tape), tape), tape)
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_gather_duplicate_indices_accumulate(self):
        x = Tensor([1.0, 2.0, 3.0])
        tape = GradTape()
        y = gather0(x, np.array([1, 1, 2]), tape)
        backward(tensor_sum(y, tape), tape)
        np.testing.assert_allclose(x.grad, [0.0, 2.0, 1.0])


class TestLossKernels:
    def test_bce_matches_scalar_definition(self):
        p = Tensor([0.5, 0.9, 0.1])
        out = bce_elems(p, np.array([1.0, 1.0, 0.0]))
        np.testing.assert_allclose(
            out.data, [np.log(2.0), -np.log(0.9), -np.log(0.9)], rtol=1e-5
        )

    def test_bce_perfect_prediction_clamped(self):
        out = bce_elems(Tensor([1.0]), np.array([1.0]))
        assert 0.0 <= float(out.data[0]) <= 1.2e-7

    def test_smooth_l1_branches(self):
        out = smooth_l1_elems(Tensor([0.0, 0.5, 2.0, -2.0]))
        np.testing.assert_allclose(out.data, [0.0, 0.125, 1.5, 1.5], rtol=1e-6)


class TestGradCheck:
    def test_quadratic_is_exact(self):
        params = {"x": Tensor([1.0, -2.0, 0.5])}

        def forward(tape):
            return tensor_sum(mul(params["x"], params["x"], tape), tape)

        errs = grad_check(forward, params)
        assert errs["x"] < 1e-6

    def test_dead_branch_reports_zero(self):
        params = {"x": Tensor([1.0]), "dead": Tensor([3.0])}

        def forward(tape):
            return tensor_sum(mul(params["x"], params["x"], tape), tape)

        errs = grad_check(forward, params)
        assert errs["dead"] == 0.0

    def test_nondeterministic_forward_detected(self):
        params = {"x": Tensor([1.0])}
        counter = {"n": 0}

        def forward(tape):
            counter["n"] += 1
            return tensor_sum(mul(params["x"], Tensor([float(counter["n"])]), tape), tape)

        with pytest.raises(ContractViolationError):
            grad_check(forward, params)

    def test_params_restored_after_check(self):
        x = Tensor([1.0, 2.0])
        params = {"x": x}

        def forward(tape):
            return tensor_sum(mul(params["x"], params["x"], tape), tape)

        grad_check(forward, params)
        assert x.data.dtype == np.float32
        np.testing.assert_array_equal(x.data, [1.0, 2.0])
        assert x.grad is None


def test_random_op_gradients_match_finite_differences():
    # Every differentiable op in one composite graph, checked on random input.
    rng = np.random.default_rng(11)
    params = {
        "x": Tensor(rng.normal(0, 1, (4, 4, 2))),
        "k": Tensor(rng.normal(0, 0.7, (3, 3, 2, 2))),
        "kb": Tensor(rng.normal(0, 0.5, 2)),
    }

    def forward(tape):
        y = conv2d(params["x"], params["k"], params["kb"], stride=1, padding="same", tape=tape)
        y = bilinear_resize(y, 3, 5, tape)
        y = softmax(y, tape, axis=-1)
        return tensor_sum(mul(y, y, tape), tape)

    errs = grad_check(forward, params)
    assert max(errs.values()) < 1e-3
