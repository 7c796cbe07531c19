"""Gradient and behavior checks for the tape-based autodiff engine."""

import numpy as np
import pytest

import cassikit.autodiff as ad
from cassikit.autodiff import (
    Tensor,
    backward,
    check_function,
    no_grad,
    NonFiniteError,
)
from cassikit.autodiff.gradcheck import standard_op_suite

SUITE = standard_op_suite(seed=0)
SUITE_IDS = [name for name, _, _ in SUITE]


@pytest.mark.parametrize("case", SUITE, ids=SUITE_IDS)
def test_op_matches_finite_differences(case):
    name, fn, arrays = case
    report = check_function(fn, arrays, step=1e-5, floor=1e-3, seed=7)
    assert report.max_error <= 1e-5, f"{name}: {report.lines()}"


def test_finite_difference_harness_catches_wrong_gradient():
    # A deliberately broken backward must be flagged, otherwise the
    # suite above proves nothing.
    def bad(x):
        out = ad.mul(x, x)

        def wrong(g, local):  # should be local[0] = local[1] = g * x.data
            local[0] = g
            local[1] = np.zeros_like(g)

        out._backward = wrong
        return out

    rng = np.random.default_rng(0)
    report = check_function(bad, [rng.standard_normal((3, 3))], seed=1)
    assert report.max_error > 1e-2


def test_backward_accumulates_over_reuse():
    x = Tensor(np.array([1.5, -0.5, 2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), x)  # x^2 + x, x used twice
    backward(ad.reduce_sum(y))
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0, rtol=0, atol=1e-12)


def test_backward_zero_grad_for_unused_leaf():
    x = Tensor(np.ones(4), requires_grad=True)
    z = Tensor(np.ones(4), requires_grad=True)
    backward(ad.reduce_sum(ad.mul(x, x)))
    assert z.grad is None
    assert np.all(x.grad == 2.0)


def test_broadcast_add_folds_gradient():
    a = Tensor(np.zeros((4, 3)), requires_grad=True)
    b = Tensor(np.zeros((1, 3)), requires_grad=True)
    c = Tensor(np.zeros(()), requires_grad=True)
    backward(ad.reduce_sum(ad.add(ad.add(a, b), c)))
    assert a.grad.shape == (4, 3)
    np.testing.assert_array_equal(b.grad, np.full((1, 3), 4.0))
    np.testing.assert_array_equal(c.grad, np.asarray(12.0))


def test_deep_chain_does_not_hit_recursion_limit():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x
    for _ in range(3000):
        y = ad.scalar_mul(y, 1.0001)
    backward(ad.reduce_sum(y))
    assert x.grad is not None and np.all(np.isfinite(x.grad))


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ad.mul(x, x)
    assert y._parents == ()
    assert not y.requires_grad


def test_nonfinite_forward_raises_with_op_name():
    x = Tensor(np.array([1.0, -1.0]))
    with pytest.raises(NonFiniteError, match="sqrt"):
        ad.sqrt(x)
    with pytest.raises(NonFiniteError, match="div"):
        ad.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 7)) * 4
    s = ad.softmax(Tensor(x))
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(5), atol=1e-12)
    s2 = ad.softmax(Tensor(x + 123.0))
    np.testing.assert_allclose(s.data, s2.data, atol=1e-12)
    # large logits must not overflow thanks to the max subtraction
    s3 = ad.softmax(Tensor(np.array([[1e4, 0.0, -1e4]])))
    assert np.all(np.isfinite(s3.data))


def test_layernorm_normalizes_last_axis():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 32)) * 3 + 5
    y = ad.layernorm(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-3)


def test_sigmoid_stable_at_extremes():
    x = Tensor(np.array([-800.0, -30.0, 0.0, 30.0, 800.0]))
    y = ad.sigmoid(x).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y[2], 0.5, atol=1e-15)
    assert y[0] >= 0.0 and y[-1] <= 1.0


def test_softplus_matches_logaddexp():
    x = np.array([-700.0, -5.0, 0.0, 5.0, 700.0])
    y = ad.softplus(Tensor(x)).data
    np.testing.assert_allclose(y, np.logaddexp(0.0, x), rtol=1e-12)


def test_gelu_matches_erf_form():
    x = np.linspace(-4, 4, 41)
    y = ad.gelu(Tensor(x)).data
    from scipy.special import erf

    ref = 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_pad_reflect_matches_numpy():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 5, 6))
    y = ad.pad(Tensor(x), ((0, 0), (0, 0), (2, 3), (1, 4)), mode="reflect").data
    ref = np.pad(x, ((0, 0), (0, 0), (2, 3), (1, 4)), mode="reflect")
    np.testing.assert_array_equal(y, ref)


def test_pad_reflect_wide_pad_gradient():
    # pad wider than the axis length exercises the repeated-fold path
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 1, 3, 3))
    report = check_function(
        lambda t: ad.pad(t, ((0, 0), (0, 0), (5, 4), (4, 5)), mode="reflect"),
        [x],
        seed=2,
    )
    assert report.max_error <= 1e-5


def test_avg_pool_forward_oracle():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    y = ad.avg_pool2d(Tensor(x)).data
    ref = np.array([[2.5, 4.5], [10.5, 12.5]]).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(y, ref)


def test_upsample_bilinear_constant_preserved():
    x = np.full((1, 2, 5, 7), 3.25)
    y = ad.upsample_bilinear2d(Tensor(x)).data
    assert y.shape == (1, 2, 10, 14)
    np.testing.assert_allclose(y, 3.25, atol=1e-12)


def test_upsample_bilinear_adjoint_dot():
    # linear op: <Ax, y> == <x, A^T y> where A^T is what backward applies
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal((1, 1, 4, 5)), requires_grad=True)
    cot = rng.standard_normal((1, 1, 8, 10))
    out = ad.upsample_bilinear2d(x)
    backward(ad.reduce_sum(ad.mul(out, Tensor(cot))))
    lhs = float(np.sum(out.data * cot))
    rhs = float(np.sum(x.data * x.grad))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_grid_resample_zero_offset_identity():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 3, 6, 6))
    off = np.zeros((2, 2, 6, 6))
    y = ad.grid_resample(Tensor(x), Tensor(off)).data
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_grid_resample_integer_shift():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((1, 1, 5, 5))
    off = np.zeros((1, 2, 5, 5))
    off[:, 1] = 1.0  # sample one column to the right
    y = ad.grid_resample(Tensor(x), Tensor(off)).data
    np.testing.assert_allclose(y[..., :-1], x[..., 1:], atol=1e-12)
    # border clamps to the last column
    np.testing.assert_allclose(y[..., -1], x[..., -1], atol=1e-12)


def test_matmul_batched_matches_numpy():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal((4, 5, 2))
    y = ad.matmul(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(y, a @ b, atol=1e-12)


def test_conv1x1_matches_einsum():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((5, 3))
    y = ad.conv1x1(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(y, np.einsum("oc,bchw->bohw", w, x), atol=1e-12)


def test_float32_graph_stays_float32():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    y = ad.gelu(ad.mul(x, x))
    assert y.data.dtype == np.float32
    backward(ad.reduce_sum(y))
    assert x.grad.dtype == np.float32


def test_check_params_agrees_with_direct_fd():
    rng = np.random.default_rng(13)
    w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    x = rng.standard_normal((4, 3))

    def loss_fn():
        return ad.reduce_sum(ad.gelu(ad.matmul(Tensor(x), w)))

    report = ad.check_params(loss_fn, [("w", w)], max_coords=9, seed=3)
    assert report.max_error <= 1e-6
