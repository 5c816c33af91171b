"""Unit and gradient tests for the autodiff tensor core."""

import numpy as np
import pytest

from saol.autodiff import (
    Tensor,
    bilinear_resize,
    concat,
    conv2d,
    global_avg_pool,
    matmul,
)

from oracles import (
    bilinear_scalar,
    conv2d_direct,
    gap_loops,
    max_rel_err,
    numeric_grad,
)

TOL = 1e-4


def analytic_grads(build, arrays):
    """Run ``build`` once with grad-enabled wrappers, return grads per array."""
    wrapped = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*wrapped)
    loss.backward()
    return [np.array(w.grad, dtype=np.float64) for w in wrapped]


def check_grads(build, arrays):
    """Central-difference check of ``build`` against its recorded adjoints."""
    got = analytic_grads(build, arrays)
    for k, arr in enumerate(arrays):
        def forward():
            wrapped = [Tensor(a) for a in arrays]
            wrapped[k] = Tensor(arrays[k], requires_grad=True)
            return build(*wrapped).data
        want = numeric_grad(forward, arr)
        err = max_rel_err(got[k], want)
        assert err < TOL, f"input {k}: relative error {err:.3e}"


def scored(out, rng):
    """Project to a scalar with a fixed random weighting so every output

    element influences the loss."""
    proj = Tensor(rng.standard_normal(out.shape))
    return (out * proj).sum()


# ===== Gradient checks, one op at a time =====


class TestGradients:
    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            a = rng.standard_normal((3, 4, 2))
            b = rng.standard_normal((4, 1))
            check_grads(lambda x, y: scored(x + y, np.random.default_rng(1)), [a, b])

    def test_mul_broadcast(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            a = rng.standard_normal((2, 1, 3, 4))
            b = rng.standard_normal((2, 5, 3, 4))
            check_grads(lambda x, y: scored(x * y, np.random.default_rng(2)), [a, b])

    def test_sub_div_neg(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            a = rng.standard_normal((4, 3))
            b = rng.standard_normal((4, 3))
            check_grads(lambda x, y: scored((x - y) / 3.0 + (-x), np.random.default_rng(3)), [a, b])

    def test_matmul(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            a = rng.standard_normal((4, 6))
            b = rng.standard_normal((6, 5))
            check_grads(lambda x, y: scored(matmul(x, y), np.random.default_rng(4)), [a, b])

    def test_relu(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            a = rng.standard_normal((5, 7))
            a += 0.25 * np.sign(a)  # keep clear of the kink for finite differences
            check_grads(lambda x: scored(x.relu(), np.random.default_rng(5)), [a])

    def test_sigmoid(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            a = 3.0 * rng.standard_normal((4, 6))
            check_grads(lambda x: scored(x.sigmoid(), np.random.default_rng(6)), [a])

    def test_log(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            a = rng.uniform(0.05, 4.0, (3, 8))
            check_grads(lambda x: scored(x.log(), np.random.default_rng(7)), [a])

    def test_exp(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a = rng.standard_normal((3, 8))
            check_grads(lambda x: scored(x.exp(), np.random.default_rng(8)), [a])

    def test_sum_mean(self):
        rng = np.random.default_rng(8)
        cases = [(None, False), ((0,), True), ((1, 2), False), ((2,), True)]
        for i in range(30):
            axes, keep = cases[i % len(cases)]
            a = rng.standard_normal((3, 4, 5))
            check_grads(
                lambda x: scored(x.sum(axes, keepdims=keep) + x.mean(axes, keepdims=keep),
                                 np.random.default_rng(9)),
                [a],
            )

    def test_softmax(self):
        rng = np.random.default_rng(9)
        for i in range(30):
            axes = [(1,), (2, 3), (1, 2, 3)][i % 3]
            a = 2.0 * rng.standard_normal((2, 3, 4, 5))
            check_grads(lambda x: scored(x.softmax(axes), np.random.default_rng(10)), [a])

    def test_reshape_concat(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            a = rng.standard_normal((2, 3, 4))
            b = rng.standard_normal((2, 5, 4))
            check_grads(
                lambda x, y: scored(concat([x, y], axis=1).reshape(2, 32), np.random.default_rng(11)),
                [a, b],
            )

    def test_conv2d(self):
        rng = np.random.default_rng(11)
        for i in range(30):
            stride = (1, 2)[i % 2]
            padding = (0, 1)[(i // 2) % 2]
            k = (1, 3)[(i // 4) % 2]
            x = rng.standard_normal((2, 2, 5, 6))
            w = rng.standard_normal((3, 2, k, k))
            b = rng.standard_normal(3)
            check_grads(
                lambda xx, ww, bb: scored(
                    conv2d(xx, ww, bb, stride=stride, padding=padding), np.random.default_rng(12)
                ),
                [x, w, b],
            )

    def test_bilinear_resize(self):
        rng = np.random.default_rng(12)
        for i in range(30):
            oh, ow = [(3, 7), (8, 2), (4, 4), (2, 9)][i % 4]
            x = rng.standard_normal((2, 2, 4, 5))
            check_grads(
                lambda xx: scored(bilinear_resize(xx, (oh, ow)), np.random.default_rng(13)), [x]
            )

    def test_global_avg_pool(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            x = rng.standard_normal((3, 4, 5, 6))
            check_grads(lambda xx: scored(global_avg_pool(xx), np.random.default_rng(14)), [x])


# ===== Forward values against independent oracles =====


class TestConvForward:
    def test_ramp_ones_kernel(self):
        # 3x3 ones kernel over the 0..24 ramp, stride 1, padding 1.
        x = Tensor(np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5))
        w = Tensor(np.ones((1, 1, 3, 3)))
        want = np.array(
            [
                [12, 21, 27, 33, 24],
                [33, 54, 63, 72, 51],
                [63, 99, 108, 117, 81],
                [93, 144, 153, 162, 111],
                [72, 111, 117, 123, 84],
            ],
            dtype=np.float64,
        )
        np.testing.assert_allclose(conv2d(x, w, padding=1).data[0, 0], want, rtol=0, atol=1e-12)

    def test_matches_direct_loop(self):
        rng = np.random.default_rng(20)
        for stride, padding, k in [(1, 0, 3), (2, 1, 3), (1, 2, 5), (2, 0, 1), (3, 1, 3)]:
            x = rng.standard_normal((2, 3, 7, 8))
            w = rng.standard_normal((4, 3, k, k))
            b = rng.standard_normal(4)
            got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
            want = conv2d_direct(x, w, b, stride=stride, padding=padding)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_output_shape(self):
        x = Tensor(np.zeros((1, 2, 9, 11)))
        w = Tensor(np.zeros((5, 2, 3, 3)))
        assert conv2d(x, w, stride=2, padding=1).shape == (1, 5, 5, 6)

    def test_errors(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ValueError):
            conv2d(x, Tensor(np.zeros((3, 5, 3, 3))))  # channel mismatch
        with pytest.raises(ValueError):
            conv2d(x, Tensor(np.zeros((3, 2, 7, 7))))  # kernel exceeds padded input
        with pytest.raises(ValueError):
            conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), stride=0)
        with pytest.raises(ValueError):
            conv2d(Tensor(np.zeros((4, 4))), Tensor(np.zeros((3, 2, 3, 3))))


class TestBilinearForward:
    def test_checkerboard_half(self):
        cb = (np.indices((4, 4)).sum(0) % 2).astype(np.float64)
        got = bilinear_resize(Tensor(cb[None, None]), (2, 2)).data[0, 0]
        np.testing.assert_allclose(got, np.full((2, 2), 0.5), rtol=0, atol=0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(21)
        for oh, ow in [(3, 3), (7, 2), (2, 7), (9, 9), (5, 11), (1, 4)]:
            x = rng.standard_normal((2, 3, 4, 6))
            got = bilinear_resize(Tensor(x), (oh, ow)).data
            want = bilinear_scalar(x, oh, ow)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_constant_is_exact(self):
        x = Tensor(np.full((1, 2, 5, 7), 0.137))
        for size in [(3, 3), (11, 13), (1, 1), (9, 2)]:
            out = bilinear_resize(x, size).data
            assert np.all(out == 0.137)

    def test_identity_size_is_bitwise(self):
        x = Tensor(np.random.default_rng(22).standard_normal((1, 2, 6, 6)))
        out = bilinear_resize(x, (6, 6))
        assert out is x

    def test_bad_size(self):
        with pytest.raises(ValueError):
            bilinear_resize(Tensor(np.zeros((1, 1, 4, 4))), (0, 3))


class TestSoftmaxForward:
    def test_exact_ratios(self):
        x = Tensor(np.log(np.array([1.0, 2.0, 4.0])))
        np.testing.assert_allclose(x.softmax(0).data, [1 / 7, 2 / 7, 4 / 7], rtol=1e-15)

    def test_normalizes_over_axis_sets(self):
        rng = np.random.default_rng(23)
        x = Tensor(rng.standard_normal((3, 4, 5, 6)))
        np.testing.assert_allclose(x.softmax((1,)).data.sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(x.softmax((2, 3)).data.sum((2, 3)), 1.0, atol=1e-12)

    def test_large_logits_stable(self):
        x = Tensor(np.array([[1e4, 1e4 + 1.0, -1e4]]))
        y = x.softmax(1).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y.sum(), 1.0, atol=1e-12)


class TestGapForward:
    def test_matches_loop_oracle(self):
        x = np.random.default_rng(24).standard_normal((2, 3, 4, 5))
        np.testing.assert_allclose(global_avg_pool(Tensor(x)).data, gap_loops(x), rtol=1e-12)

    def test_needs_nchw(self):
        with pytest.raises(ValueError):
            global_avg_pool(Tensor(np.zeros((3, 4))))


# ===== Backward semantics =====


class TestBackwardSemantics:
    def test_relu_subgradient(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        x.relu().sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_backward_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_allclose(x.grad, 2.0 * first)
        x.zero_grad()
        assert x.grad is None

    def test_scalar_seed_required(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_explicit_seed(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        seed = np.array([[1.0, 2.0], [3.0, 4.0]])
        (x * 3.0).backward(seed)
        np.testing.assert_allclose(x.grad, 3.0 * seed)
        with pytest.raises(ValueError):
            (x * 3.0).backward(np.ones(3))

    def test_detach_blocks_flow_and_shares_values(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        y = x * 2.0
        d = y.detach()
        assert d.data is y.data
        assert not d.requires_grad
        loss = (d * Tensor(np.ones(3), requires_grad=True)).sum()
        loss.backward()
        assert x.grad is None

    def test_no_grad_leaves_untouched(self):
        x = Tensor(np.ones(3))
        y = Tensor(np.ones(3), requires_grad=True)
        (x * y).sum().backward()
        assert x.grad is None
        np.testing.assert_array_equal(y.grad, np.ones(3))

    def test_backward_needs_grad(self):
        with pytest.raises(ValueError):
            Tensor(np.ones(1)).backward()

    def test_shared_node_gets_summed_adjoints(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * 2.0
        (y + y * y).sum().backward()  # d/dx (2x + 4x^2) = 2 + 8x
        np.testing.assert_allclose(x.grad, [26.0])


class TestTensorBasics:
    def test_dtype_coercion_and_shape(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float64 and t.shape == (2, 2) and t.size == 4

    def test_float32_preserved(self):
        t = Tensor(np.ones((2, 2), dtype=np.float32))
        assert (t * 2.0).dtype == np.float32
        assert t.sum().dtype == np.float32
        assert t.softmax(1).dtype == np.float32

    def test_log_domain(self):
        with pytest.raises(ValueError):
            Tensor(np.array([1.0, 0.0])).log()

    def test_tensor_division_rejected(self):
        with pytest.raises(TypeError):
            Tensor(np.ones(2)) / Tensor(np.ones(2))

    def test_matmul_requires_2d(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 2))))
        with pytest.raises(ValueError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_concat_empty(self):
        with pytest.raises(ValueError):
            concat([])
