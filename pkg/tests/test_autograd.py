import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesynth.autograd import Parameter, Tensor, adam_step, load_checkpoint, save_checkpoint
from edgesynth.autograd import functional as F
from edgesynth.autograd.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint
from edgesynth.exceptions import (
    ConfigError,
    DegenerateBatchError,
    GradientStateError,
    LabelRangeError,
    NumericalError,
    ShapeError,
)

from gradcases import ALL_CASES, check_case
from oracles import finite_difference_grad, grad_close, naive_conv2d, naive_full_conv


@pytest.mark.parametrize("builder", ALL_CASES, ids=lambda b: b.__name__)
@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_matches_finite_differences(builder, seed):
    ok, worst = check_case(builder, seed)
    assert ok, f"{builder.__name__}: worst relative error {worst:.2e}"


class TestConv2d:
    def test_output_shape(self):
        x = Tensor(np.zeros((1, 3, 256, 256)))
        w = Tensor(np.zeros((8, 3, 4, 4)))
        assert F.conv2d(x, w, None, stride=2, pad=1).shape == (1, 8, 128, 128)

    def test_zero_weight_and_bias(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 5, 5)))
        out = F.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.zeros(3)), 1, 1)
        assert not out.data.any()

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_sliding_window_oracle(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x, w, b = rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(1, 1, 3, 3)), rng.normal(size=1)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, pad), rtol=0, atol=1e-12)

    def test_errors(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ShapeError):
            F.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ConfigError):
            F.conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), stride=0)
        with pytest.raises(ShapeError):
            F.conv2d(x, Tensor(np.zeros((1, 2, 5, 5))))


class TestConvTranspose2d:
    def test_output_shape(self):
        x = Tensor(np.zeros((1, 1, 128, 128)))
        out = F.conv_transpose2d(x, Tensor(np.zeros((1, 3, 4, 4))), None, stride=2, pad=1)
        assert out.shape == (1, 3, 256, 256)

    def test_zero_input_gives_bias(self):
        out = F.conv_transpose2d(
            Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones((2, 2, 3, 3))), Tensor(np.array([0.5, -1.0])), 1, 0
        )
        np.testing.assert_array_equal(out.data[0, 0], 0.5)
        np.testing.assert_array_equal(out.data[0, 1], -1.0)

    def test_stride_one_is_full_convolution(self):
        rng = np.random.default_rng(3)
        x, w = rng.normal(size=(2, 2, 4, 5)), rng.normal(size=(2, 3, 3, 3))
        out = F.conv_transpose2d(Tensor(x), Tensor(w), None, 1, 0)
        np.testing.assert_allclose(out.data, naive_full_conv(x, w), atol=1e-12)
        # same thing as a padded correlation with the flipped, channel-swapped kernel
        flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        corr = F.conv2d(Tensor(x), Tensor(flipped.copy()), None, 1, 2)
        np.testing.assert_allclose(out.data, corr.data, atol=1e-12)

    @given(
        stride=st.integers(1, 3),
        k=st.integers(1, 4),
        ho=st.integers(2, 5),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=30, deadline=None)
    def test_adjoint_of_conv2d(self, stride, k, ho, seed):
        rng = np.random.default_rng(seed)
        pad = int(rng.integers(0, k // 2 + 1))
        # exact cover: windows tile the padded input, so no output padding is needed
        h = (ho - 1) * stride + k - 2 * pad
        x = rng.normal(size=(2, 3, h, h))
        w = rng.normal(size=(4, 3, k, k))
        y = rng.normal(size=(2, 4, ho, ho))
        lhs = np.sum(F.conv2d(Tensor(x), Tensor(w), None, stride, pad).data * y)
        rhs = np.sum(x * F.conv_transpose2d(Tensor(y), Tensor(w), None, stride, pad).data)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, size=(4, 3, 5, 5)))
        out = F.batch_norm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), None, "train", epsilon=1e-12)
        assert np.abs(out.data.mean(axis=(0, 2, 3))).max() < 1e-9
        assert np.abs(out.data.var(axis=(0, 2, 3)) - 1).max() < 1e-9

    def test_zero_gamma_gives_beta(self):
        x = Tensor(np.random.default_rng(1).normal(size=(2, 2, 3, 3)))
        out = F.batch_norm2d(x, Tensor(np.zeros(2)), Tensor(np.array([0.3, -2.0])), None, "train")
        np.testing.assert_array_equal(out.data[:, 0], 0.3)
        np.testing.assert_array_equal(out.data[:, 1], -2.0)

    def test_running_stats_and_eval(self):
        stats = F.RunningStats(1, momentum=0.1)
        data = np.arange(8, dtype=float).reshape(2, 1, 2, 2)
        F.batch_norm2d(Tensor(data), Tensor(np.ones(1)), Tensor(np.zeros(1)), stats, "train")
        assert stats.mean[0] == pytest.approx(0.1 * 3.5)
        assert stats.var[0] == pytest.approx(0.9 + 0.1 * np.var(data, ddof=1))
        out = F.batch_norm2d(Tensor(data), Tensor(np.ones(1)), Tensor(np.zeros(1)), stats, "eval", 0.0)
        np.testing.assert_allclose(out.data, (data - stats.mean[0]) / np.sqrt(stats.var[0]))

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatchError):
            F.batch_norm2d(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)))


class TestActivations:
    def test_values(self):
        out = F.relu(Tensor([-2.0, 3.0]))
        assert out.data.tolist() == [0.0, 3.0]
        assert F.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_relu_subgradient_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        F.relu(x).sum().backward()
        assert x.grad[0] == 0.0

    def test_leaky_gradient_negative_side(self):
        alpha = 0.2
        x0 = np.array([-0.7, -2.5])
        x = Tensor(x0, requires_grad=True)
        F.leaky_relu(x, alpha).sum().backward()
        numeric = finite_difference_grad(
            lambda a: F.leaky_relu(Tensor(a), alpha).sum().item(), [x0], 0, [(0,), (1,)]
        )
        np.testing.assert_allclose(numeric, alpha, rtol=1e-6)
        np.testing.assert_allclose(x.grad, alpha)

    def test_bad_alpha(self):
        with pytest.raises(ConfigError):
            F.leaky_relu(Tensor([1.0]), 1.5)


class TestPoolingAndConcat:
    def test_max_pool(self):
        out = F.max_pool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2, 2)
        assert out.data.tolist() == [[[[4.0]]]]

    def test_concat_shape_and_error(self):
        a, b = Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 1, 4, 4)))
        assert F.concat_channels([a, b]).shape == (1, 4, 4, 4)
        with pytest.raises(ShapeError):
            F.concat_channels([a, Tensor(np.zeros((1, 1, 4, 5)))])

    def test_upsample_then_pool_round_trip(self):
        x = np.random.default_rng(5).normal(size=(1, 1, 8, 8))
        back = F.max_pool2d(F.upsample_nearest(Tensor(x), 2), 2, 2)
        np.testing.assert_array_equal(back.data, x)


class TestLosses:
    def test_l1_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
        assert F.l1(x, x).item() == 0.0

    def test_bce_at_zero(self):
        assert F.bce_with_logits(Tensor([0.0]), 1.0).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_weighted_ce_uniform_logits(self):
        labels = np.array([[[0, 1], [1, 0]]])
        out = F.weighted_softmax_ce(Tensor(np.zeros((1, 2, 2, 2))), labels, [0.674, 1.933])
        assert out.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_weighted_ce_hand_computation(self):
        # per pixel: -log softmax(z)[y], weighted by w[y], normalized by sum of weights used
        logits = np.array([[[[2.0, 0.0], [1.0, -1.0]], [[0.0, 1.0], [1.0, 3.0]]]])
        labels = np.array([[[0, 1], [0, 1]]])
        w = [0.674, 1.933]
        expected_num, expected_den = 0.0, 0.0
        for r in range(2):
            for c in range(2):
                z0, z1 = logits[0, 0, r, c], logits[0, 1, r, c]
                y = labels[0, r, c]
                lse = math.log(math.exp(z0) + math.exp(z1))
                expected_num += w[y] * (lse - (z0, z1)[y])
                expected_den += w[y]
        out = F.weighted_softmax_ce(Tensor(logits), labels, w)
        assert out.item() == pytest.approx(expected_num / expected_den, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(LabelRangeError):
            F.weighted_softmax_ce(Tensor(np.zeros((1, 2, 1, 1))), np.array([[[2]]]), [1.0, 1.0])


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_gradients_accumulate_across_graphs(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * 2.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [5.0, 5.0])

    def test_repeated_backward_raises(self):
        x = Tensor([1.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GradientStateError):
            loss.backward()

    def test_non_scalar_root(self):
        with pytest.raises(ShapeError):
            (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()

    def test_composite_conv_bn_relu(self):
        rng = np.random.default_rng(11)
        x0 = rng.normal(size=(2, 2, 6, 6))
        w0 = rng.normal(size=(3, 2, 3, 3))
        target = rng.normal(size=(2, 3, 6, 6))
        gamma, beta = rng.normal(size=3), rng.normal(size=3)

        def loss_fn(x, w):
            h = F.conv2d(x, w, None, 1, 1)
            h = F.relu(F.batch_norm2d(h, Tensor(gamma), Tensor(beta), None, "train"))
            return F.l1(h, Tensor(target)) + (h * h).mean()

        x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)
        loss_fn(x, w).backward()
        pick = np.random.default_rng(12)
        for idx, (arr, t) in enumerate([(x0, x), (w0, w)]):
            coords = [np.unravel_index(int(i), arr.shape) for i in pick.choice(arr.size, 10, replace=False)]
            numeric = finite_difference_grad(
                lambda a, b: loss_fn(Tensor(a), Tensor(b)).item(), [x0, w0], idx, coords
            )
            ok, err = grad_close([t.grad[c] for c in coords], numeric)
            assert ok, err

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(42)
            x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
            w = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
            F.tanh(F.conv2d(x, w, None, 1, 1)).mean().backward()
            return x.grad.tobytes() + w.grad.tobytes()

        assert run() == run()

    def test_ops_do_not_mutate_inputs(self):
        rng = np.random.default_rng(2)
        x0 = rng.normal(size=(2, 2, 4, 4))
        x = Tensor(x0, requires_grad=True)
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        out = F.max_pool2d(F.relu(F.batch_norm2d(x, g, b)), 2, 2)
        out.sum().backward()
        np.testing.assert_array_equal(x.data, x0)


class TestAdam:
    def test_zero_gradient(self):
        p = Parameter(np.array([1.0, -2.0]))
        adam_step([p], [np.zeros(2)], lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert not p.adam_m.any() and not p.adam_v.any()
        assert p.step_count == 1

    def test_first_step_moves_by_lr(self):
        lr = 0.01
        p = Parameter(np.array([0.5]))
        adam_step([p], [np.ones(1)], lr=lr)
        # bias correction cancels; only epsilon separates the step from lr
        assert p.data[0] - 0.5 == pytest.approx(-lr, rel=1e-7)

    def test_parameter_order_independent(self):
        rng = np.random.default_rng(0)
        data = [rng.normal(size=3) for _ in range(2)]
        grads = [rng.normal(size=3) for _ in range(2)]
        a = [Parameter(d) for d in data]
        b = [Parameter(d) for d in data]
        for _ in range(3):
            adam_step(a, grads)
            adam_step(b[::-1], grads[::-1])
        for pa, pb in zip(a, b):
            assert pa.data.tobytes() == pb.data.tobytes()

    def test_nan_gradient(self):
        with pytest.raises(NumericalError):
            adam_step([Parameter([1.0])], [np.array([np.nan])])

    def test_skips_parameters_without_grad(self):
        p = Parameter([1.0])
        adam_step([p])
        assert p.step_count == 0 and p.data[0] == 1.0


class TestCheckpoint:
    def test_round_trip_is_byte_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        state = {"conv.weight": rng.normal(size=(2, 3, 4, 4)), "bn.stats.mean": rng.normal(size=5), "s": np.array(1.5)}
        path = tmp_path / "a.ckpt"
        save_checkpoint(path, state)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(state)
        for k in state:
            assert loaded[k].tobytes() == state[k].tobytes()
        save_checkpoint(tmp_path / "b.ckpt", loaded)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_layout(self):
        blob = encode_checkpoint({"w": np.array([[1.0, 2.0]])})
        expected = (
            MAGIC
            + (1).to_bytes(8, "little") + b"w"
            + (2).to_bytes(8, "little") + (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
            + np.array([1.0, 2.0], dtype="<f8").tobytes()
        )
        assert blob == expected
        assert decode_checkpoint(blob)["w"].shape == (1, 2)
