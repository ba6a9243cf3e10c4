"""Primitive operations against hand values and naive-loop oracles."""
import numpy as np
import numpy.testing as npt
import pytest

from rfnet.tensor import (OverflowInComputeError, ShapeError, Tensor, activation, add,
                          affine, axis_scale, concat, conv2d, exp, global_pool, linear,
                          matmul, mean, mul, no_grad, reduce_max, reduce_sum, relu,
                          reshape, rows_l2_normalize, rows_sq_distance, sigmoid,
                          smooth_l1, softmax_cross_entropy, stack)
from rfnet.optim import Sgd, truncated_normal
from rfnet.rng import Prng


def matmul_oracle(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def conv_oracle(x, k, stride, padding):
    b, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    xp = np.zeros((b, h + 2 * padding, w + 2 * padding, cin), dtype=x.dtype)
    xp[:, padding:padding + h, padding:padding + w, :] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((b, oh, ow, cout), dtype=x.dtype)
    for bi in range(b):
        for oi in range(oh):
            for oj in range(ow):
                for co in range(cout):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(cin):
                                acc += xp[bi, oi * stride + i, oj * stride + j, ci] * k[i, j, ci, co]
                    out[bi, oi, oj, co] = acc
    return out


class TestLinear:
    def test_identity_weight(self):
        x = Tensor([[1.0, 2.0]])
        w = Tensor(np.eye(2, dtype=np.float32))
        npt.assert_array_equal(linear(x, w).data, [[1.0, 2.0]])

    def test_hand_dot_product(self):
        out = linear(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(out.data, [[11.0]])

    def test_against_triple_loop(self, rng):
        x = rng.standard_normal((3, 5)).astype(np.float32)
        w = rng.standard_normal((5, 2)).astype(np.float32)
        npt.assert_allclose(linear(Tensor(x), Tensor(w)).data, matmul_oracle(x, w), rtol=1e-5)

    def test_many_random_shapes(self, rng):
        for _ in range(100):
            m, k, n = rng.integers(1, 8, size=3)
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
            npt.assert_allclose(matmul(Tensor(a), Tensor(b)).data, matmul_oracle(a, b),
                                rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
            linear(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.random((1, 5, 5, 1)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), dtype=np.float32)
        npt.assert_array_equal(conv2d(Tensor(x), Tensor(k)).data, x)

    def test_impulse_response_reproduces_kernel(self, rng):
        # cross-correlation: the impulse response is the kernel mirrored in
        # both spatial directions, centered at the delta
        x = np.zeros((1, 5, 5, 1), dtype=np.float32)
        x[0, 2, 2, 0] = 1.0
        k = rng.random((3, 3, 1, 1)).astype(np.float32)
        out = conv2d(Tensor(x), Tensor(k), stride=1, padding=1)
        npt.assert_allclose(out.data[0, 1:4, 1:4, 0], k[::-1, ::-1, 0, 0], rtol=1e-6)

    def test_against_nested_loop_oracle(self, rng):
        x = rng.standard_normal((2, 6, 6, 3))
        k = rng.standard_normal((3, 3, 3, 2))
        out = conv2d(Tensor(x), Tensor(k), stride=2, padding=1)
        npt.assert_allclose(out.data, conv_oracle(x, k, 2, 1), rtol=1e-10, atol=1e-12)

    def test_many_random_shapes(self, rng):
        for _ in range(100):
            b = int(rng.integers(1, 3))
            h = w = int(rng.integers(3, 7))
            cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            kk = int(rng.choice([1, 3]))
            stride = int(rng.choice([1, 2]))
            padding = int(rng.choice([0, 1]))
            if (h + 2 * padding - kk) < 0:
                continue
            x = rng.standard_normal((b, h, w, cin))
            k = rng.standard_normal((kk, kk, cin, cout))
            out = conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding)
            npt.assert_allclose(out.data, conv_oracle(x, k, stride, padding),
                                rtol=1e-10, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channel mismatch"):
            conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            conv2d(Tensor(np.ones((1, 4, 4, 1))), Tensor(np.ones((2, 2, 1, 1))))


class TestActivations:
    def test_relu_definition(self):
        out = activation(Tensor([-1.0, 2.0]), "relu")
        npt.assert_array_equal(out.data, [0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert activation(Tensor([0.0]), "sigmoid").data[0] == 0.5

    def test_sigmoid_reference_value(self):
        # 1 / (1 + e^-1) evaluated in extended precision
        out = sigmoid(Tensor([1.0], dtype=np.float64))
        npt.assert_allclose(out.data[0], 0.7310585786300049, atol=1e-6)

    def test_sigmoid_open_interval(self, rng):
        x = Tensor(rng.uniform(-500, 500, size=1000).astype(np.float32))
        s = sigmoid(x).data
        assert np.all(s > 0.0) and np.all(s < 1.0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown activation"):
            activation(Tensor([0.0]), "tanh")


class TestSgd:
    def test_zero_grad_is_fixed_point(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        opt = Sgd({"p": p}, lr=0.1, momentum=0.9, weight_decay=0.0)
        p.grad = np.zeros_like(p.data)
        opt.step()
        npt.assert_array_equal(p.data, [1.0, -2.0])

    def test_single_step_hand_value(self):
        p = Tensor(np.array([1.0], dtype=np.float64), requires_grad=True)
        opt = Sgd({"p": p}, lr=0.1, momentum=0.0, weight_decay=0.0)
        p.grad = np.array([0.5])
        opt.step()
        npt.assert_allclose(p.data, [0.95])

    def test_momentum_accumulates_towards_19x(self):
        # second velocity = 0.9 * g + g = 1.9 g when decay = 0
        p = Tensor(np.array([0.0], dtype=np.float64), requires_grad=True)
        opt = Sgd({"p": p}, lr=1.0, momentum=0.9, weight_decay=0.0)
        g = 0.5
        p.grad = np.array([g])
        opt.step()
        p.grad = np.array([g])
        opt.step()
        npt.assert_allclose(opt.velocity["p"], [1.9 * g])
        npt.assert_allclose(p.data, [-(g + 1.9 * g)])

    def test_weight_decay_enters_velocity(self):
        p = Tensor(np.array([2.0], dtype=np.float64), requires_grad=True)
        opt = Sgd({"p": p}, lr=0.1, momentum=0.0, weight_decay=0.01)
        p.grad = np.array([0.0])
        opt.step()
        # v = 0 + 0 + 0.01 * 2 = 0.02, p = 2 - 0.1 * 0.02
        npt.assert_allclose(p.data, [1.998])

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = Sgd({"p": p}, lr=0.1)
        p.grad = np.zeros(4)
        with pytest.raises(ShapeError):
            opt.step()


class TestTruncatedNormal:
    def test_bounds_and_moments(self):
        vals = truncated_normal(Prng(3), (20000,), std=0.01)
        assert np.abs(vals).max() <= 0.02 + 1e-9
        assert abs(vals.mean()) < 1e-3
        assert 0.005 < vals.std() < 0.015

    def test_deterministic(self):
        a = truncated_normal(Prng(11), (64,))
        b = truncated_normal(Prng(11), (64,))
        npt.assert_array_equal(a, b)


class TestInvariants:
    def test_forward_determinism_bitwise(self, rng):
        x = rng.standard_normal((4, 6)).astype(np.float32)
        w = rng.standard_normal((6, 3)).astype(np.float32)

        def run():
            out = sigmoid(linear(relu(Tensor(x)), Tensor(w)))
            return reduce_sum(out).data.copy()

        assert run().tobytes() == run().tobytes()

    def test_overflow_is_an_error_not_inf(self):
        with pytest.raises(OverflowInComputeError):
            exp(Tensor([800.0], dtype=np.float64))
        big = Tensor(np.array([3e38], dtype=np.float32))
        with pytest.raises(OverflowInComputeError):
            mul(big, 10.0)

    def test_rank_limit(self):
        with pytest.raises(ShapeError, match="rank"):
            Tensor(np.zeros((2, 2, 2, 2, 2, 2)))

    def test_no_grad_suppresses_graph(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = relu(x)
        assert not y.requires_grad and y._parents == ()


class TestStructuralOps:
    def test_stack_concat_reshape_roundtrip(self, rng):
        parts = [Tensor(rng.standard_normal((2, 3))) for _ in range(4)]
        st = stack(parts, axis=0)
        assert st.shape == (4, 2, 3)
        cc = concat(parts, axis=-1)
        assert cc.shape == (2, 12)
        npt.assert_array_equal(reshape(st, (4, 6)).data, st.data.reshape(4, 6))

    def test_reduce_max_first_tie_wins(self):
        x = Tensor(np.array([[1.0, 5.0], [5.0, 0.0]]), requires_grad=True)
        out = reduce_max(x, axis=0)
        npt.assert_array_equal(out.data, [5.0, 5.0])
        reduce_sum(out).backward()
        npt.assert_array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_axis_scale_matches_loop(self, rng):
        st = rng.standard_normal((2, 3, 4, 4, 2))
        w = rng.random((2, 3))
        out = axis_scale(Tensor(st), Tensor(w), axis=1)
        expected = np.empty_like(st)
        for b in range(2):
            for i in range(3):
                expected[b, i] = st[b, i] * w[b, i]
        npt.assert_allclose(out.data, expected, rtol=1e-12)

    def test_global_pool_constant_input(self):
        x = Tensor(np.full((3, 3, 2), 4.25))
        for mode in ("max", "avg"):
            npt.assert_array_equal(global_pool(x, mode).data, [4.25, 4.25])

    def test_global_pool_single_peak(self):
        x = np.zeros((1, 4, 4, 1), dtype=np.float32)
        x[0, 2, 1, 0] = 9.0
        assert global_pool(Tensor(x), "max").data[0, 0] == 9.0

    def test_global_pool_avg_matches_mean_oracle(self, rng):
        x = rng.standard_normal((2, 5, 5, 3))
        out = global_pool(Tensor(x), "avg")
        expected = x.sum(axis=(1, 2)) / 25.0
        npt.assert_allclose(out.data, expected, atol=1e-6)


class TestFusedLossKernels:
    def test_softmax_ce_oracle(self, rng):
        logits = rng.standard_normal((2, 3))
        labels = np.array([2, 0])
        out = softmax_cross_entropy(Tensor(logits), labels)
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expected = -np.log(probs[np.arange(2), labels]).mean()
        npt.assert_allclose(float(out.data), expected, rtol=1e-10)

    def test_softmax_ce_gradient_closed_form(self, rng):
        logits = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        labels = np.array([0, 3, 1, 4])
        softmax_cross_entropy(logits, labels).backward()
        z = logits.data
        probs = np.exp(z - z.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        onehot = np.eye(5)[labels]
        npt.assert_allclose(logits.grad, (probs - onehot) / 4.0, rtol=1e-10, atol=1e-12)

    def test_smooth_l1_branch_values(self):
        one = smooth_l1(Tensor([2.0]), Tensor([0.0]))
        npt.assert_allclose(float(one.data), 1.5)
        two = smooth_l1(Tensor([0.5]), Tensor([0.0]))
        npt.assert_allclose(float(two.data), 0.125)

    def test_rows_normalize_unit_length(self, rng):
        x = Tensor(rng.standard_normal((5, 7)))
        out = rows_l2_normalize(x)
        npt.assert_allclose((out.data ** 2).sum(axis=1), np.ones(5), rtol=1e-12)

    def test_rows_normalize_zero_row_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            rows_l2_normalize(Tensor(np.zeros((2, 3))))

    def test_rows_sq_distance(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        out = rows_sq_distance(Tensor(a), Tensor(b))
        npt.assert_allclose(out.data, ((a - b) ** 2).sum(axis=1), rtol=1e-12)
