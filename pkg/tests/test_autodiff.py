"""Gradient correctness for every differentiable primitive.

Each primitive is checked against central finite differences at seeded
random points chosen away from kinks. The checker itself is exercised on
known-good and deliberately broken gradients.
"""

import numpy as np
import pytest

from countgrad import autodiff as ad

TOL = 1e-6


def check(fn, point, tol=TOL):
    res = ad.grad_check(fn, point)
    assert not res.at_kink, "test point unexpectedly on a kink"
    assert res.max_rel_error <= tol, f"max relative error {res.max_rel_error:.3e}"
    return res


class TestElementwise:
    def test_add_sub_mul_chain(self):
        rng = np.random.default_rng(0)
        c = rng.normal(size=(3, 4))

        def fn(x):
            y = ad.mul(ad.add(x, c), ad.sub(x, 0.5 * c))
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(3, 4)))

    def test_operator_overloads_match_functions(self):
        rng = np.random.default_rng(1)
        xv = rng.normal(size=(5,))
        tape = ad.Tape()
        x = ad.new_param(tape, xv)
        via_ops = ad.reduce_sum((x + 2.0) * x - (-x))
        tape2 = ad.Tape()
        x2 = ad.new_param(tape2, xv)
        via_fns = ad.reduce_sum(ad.sub(ad.mul(ad.add(x2, 2.0), x2), ad.neg(x2)))
        np.testing.assert_array_equal(via_ops.values, via_fns.values)

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(2)
        row = rng.normal(size=(1, 4))

        def fn(x):
            tape = x.tape
            r = ad.new_param(tape, row)
            prod = ad.mul(x, r)  # (3,4) * (1,4) broadcasts
            return ad.reduce_sum(ad.mul(prod, prod))

        check(fn, rng.normal(size=(3, 4)))

    def test_broadcast_grad_shape_matches_param(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.ones((1, 3)))
        y = ad.new_param(tape, np.ones((4, 3)))
        out = ad.reduce_sum(ad.mul(x, y))
        grads = ad.backward(tape, out)
        assert grads.wrt(x).shape == (1, 3)
        np.testing.assert_array_equal(grads.wrt(x), np.full((1, 3), 4.0))

    def test_scale_and_neg(self):
        rng = np.random.default_rng(3)
        check(lambda x: ad.reduce_sum(ad.scale(ad.neg(x), 2.5)), rng.normal(size=(6,)))

    def test_sigmoid(self):
        rng = np.random.default_rng(4)
        check(lambda x: ad.reduce_sum(ad.sigmoid(x)), rng.normal(size=(7,)) * 3.0)

    def test_sigmoid_extreme_inputs_stable(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([-800.0, 800.0]))
        y = ad.sigmoid(x)
        assert np.all(np.isfinite(y.values))
        grads = ad.backward(tape, ad.reduce_sum(y))
        assert np.all(np.isfinite(grads.wrt(x)))

    def test_softplus(self):
        rng = np.random.default_rng(5)
        check(lambda x: ad.reduce_sum(ad.softplus(x)), rng.normal(size=(7,)) * 3.0)

    def test_softplus_large_negative_stable(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([-900.0]))
        y = ad.softplus(x)
        assert y.values[0] >= 0.0 and np.isfinite(y.values[0])

    def test_leaky_relu(self):
        rng = np.random.default_rng(6)
        pt = rng.normal(size=(8,))
        pt[np.abs(pt) < 0.1] = 0.5  # keep the stencil off the origin
        check(lambda x: ad.reduce_sum(ad.leaky_relu(x)), pt)

    def test_leaky_relu_negative_slope(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([-2.0, 3.0]))
        y = ad.leaky_relu(x, alpha=0.1)
        np.testing.assert_allclose(y.values, [-0.2, 3.0])
        grads = ad.backward(tape, ad.reduce_sum(y))
        np.testing.assert_allclose(grads.wrt(x), [0.1, 1.0])

    def test_log_and_sqrt(self):
        rng = np.random.default_rng(7)
        pt = rng.uniform(0.5, 3.0, size=(6,))
        check(lambda x: ad.reduce_sum(ad.log(x)), pt)
        check(lambda x: ad.reduce_sum(ad.sqrt(x)), pt)

    def test_log_rejects_nonpositive(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            ad.log(x)

    def test_clamp_interior_gradient(self):
        rng = np.random.default_rng(8)
        pt = rng.uniform(-0.8, 0.8, size=(6,))
        check(lambda x: ad.reduce_sum(ad.mul(ad.clamp(x, -1.0, 1.0), x)), pt)

    def test_clamp_blocks_gradient_outside(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([-3.0, 0.2, 3.0]))
        y = ad.clamp(x, -1.0, 1.0)
        np.testing.assert_allclose(y.values, [-1.0, 0.2, 1.0])
        grads = ad.backward(tape, ad.reduce_sum(y))
        np.testing.assert_allclose(grads.wrt(x), [0.0, 1.0, 0.0])


class TestLinearAndShape:
    def test_matvec_both_arguments(self):
        rng = np.random.default_rng(10)
        w0 = rng.normal(size=(4, 3))
        v0 = rng.normal(size=(3,))

        def fn_w(w):
            out = ad.matvec(w, v0)
            return ad.reduce_sum(ad.mul(out, out))

        def fn_v(v):
            out = ad.matvec(w0, v)
            return ad.reduce_sum(ad.mul(out, out))

        check(fn_w, w0)
        check(fn_v, v0)

    def test_matvec_shape_validation(self):
        tape = ad.Tape()
        w = ad.new_param(tape, np.ones((2, 3)))
        v = ad.new_param(tape, np.ones(4))
        with pytest.raises(ValueError):
            ad.matvec(w, v)

    def test_take_index_scatters(self):
        rng = np.random.default_rng(11)

        def fn(x):
            row = ad.take_index(x, 1)
            return ad.reduce_sum(ad.mul(row, row))

        res = check(fn, rng.normal(size=(3, 4)))
        # rows 0 and 2 receive exactly zero gradient
        errs = res.errors.reshape(3, 4)
        assert np.all(np.isfinite(errs))

    def test_take_index_bounds(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.ones((2, 3)))
        with pytest.raises(IndexError):
            ad.take_index(x, 2)

    def test_reshape_round_trip(self):
        rng = np.random.default_rng(12)

        def fn(x):
            y = ad.reshape(x, (2, 6))
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(3, 4)))

    def test_concat_channels(self):
        rng = np.random.default_rng(13)
        b0 = rng.normal(size=(2, 2, 3))

        def fn(a):
            tape = a.tape
            b = ad.new_param(tape, b0)
            y = ad.concat_channels(a, b)
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(2, 2, 2)))


class TestConvAndPooling:
    def test_conv2d_input_gradient(self):
        rng = np.random.default_rng(20)
        k = rng.normal(size=(3, 3, 2, 4)) * 0.3

        def fn(x):
            y = ad.conv2d(x, k, stride=1, padding=1)
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(5, 5, 2)))

    def test_conv2d_kernel_gradient(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(6, 6, 2))

        def fn(k):
            y = ad.conv2d(x, k, stride=2, padding=1)
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(3, 3, 2, 3)) * 0.3)

    def test_conv2d_output_shape(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.zeros((8, 8, 3)))
        k = ad.new_param(tape, np.zeros((3, 3, 3, 5)))
        assert ad.conv2d(x, k, stride=2, padding=1).shape == (4, 4, 5)
        assert ad.conv2d(x, k, stride=1, padding=0).shape == (6, 6, 5)

    def test_conv2d_matches_direct_computation(self):
        rng = np.random.default_rng(22)
        xv = rng.normal(size=(4, 4, 2))
        kv = rng.normal(size=(2, 2, 2, 3))
        tape = ad.Tape()
        out = ad.conv2d(ad.new_param(tape, xv), ad.new_param(tape, kv)).values
        expect = np.zeros((3, 3, 3))
        for i in range(3):
            for j in range(3):
                patch = xv[i : i + 2, j : j + 2]
                expect[i, j] = np.tensordot(patch, kv, axes=3)
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_conv2d_channel_mismatch(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.zeros((4, 4, 2)))
        k = ad.new_param(tape, np.zeros((3, 3, 3, 1)))
        with pytest.raises(ValueError):
            ad.conv2d(x, k)

    def test_upsample_nearest(self):
        rng = np.random.default_rng(23)

        def fn(x):
            y = ad.upsample_nearest(x, 2)
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(3, 3, 2)))

    def test_upsample_values(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.arange(4.0).reshape(2, 2, 1))
        y = ad.upsample_nearest(x, 2)
        np.testing.assert_array_equal(y.values[:2, :2, 0], 0.0)
        np.testing.assert_array_equal(y.values[2:, 2:, 0], 3.0)

    def test_grid_pool_sum_gradient(self):
        rng = np.random.default_rng(24)

        def fn(x):
            y = ad.grid_pool_sum(x, 2)
            return ad.reduce_sum(ad.mul(y, y))

        check(fn, rng.normal(size=(6, 4)))

    def test_grid_pool_sum_conserves_total(self):
        rng = np.random.default_rng(25)
        xv = rng.uniform(size=(16, 16))
        tape = ad.Tape()
        pooled = ad.grid_pool_sum(ad.new_param(tape, xv), 8)
        assert pooled.shape == (2, 2)
        np.testing.assert_allclose(pooled.values.sum(), xv.sum(), rtol=1e-12)

    def test_grid_pool_sum_divisibility(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.zeros((5, 4)))
        with pytest.raises(ValueError):
            ad.grid_pool_sum(x, 2)


class TestReductionsAndL1:
    def test_reduce_sum_scalar_shape(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.ones((2, 3)))
        s = ad.reduce_sum(x)
        assert s.shape == ()
        assert float(s.values) == 6.0

    def test_l1_diff_gradient_off_kink(self):
        rng = np.random.default_rng(30)
        target = rng.normal(size=(4, 4))

        def fn(x):
            return ad.l1_diff(x, target)

        check(fn, target + rng.uniform(0.5, 1.0, size=(4, 4)) * rng.choice([-1, 1], size=(4, 4)))

    def test_l1_diff_marks_kink_on_zero_residual(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([1.0, 2.0]))
        ad.l1_diff(x, np.array([1.0, 5.0]))
        assert tape.at_kink

    def test_l1_diff_sign_zero_subgradient(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([3.0, 1.0]))
        loss = ad.l1_diff(x, np.array([3.0, 0.0]))
        grads = ad.backward(tape, loss)
        np.testing.assert_array_equal(grads.wrt(x), [0.0, 1.0])


class TestTapeMechanics:
    def test_unreached_leaf_gets_zeros(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.ones(3))
        y = ad.new_param(tape, np.ones(3))
        out = ad.reduce_sum(x)
        grads = ad.backward(tape, out)
        np.testing.assert_array_equal(grads.wrt(y), np.zeros(3))

    def test_fan_out_accumulates(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([2.0]))
        out = ad.reduce_sum(ad.add(ad.mul(x, x), ad.mul(x, x)))
        grads = ad.backward(tape, out)
        np.testing.assert_allclose(grads.wrt(x), [8.0])

    def test_repeated_backward_does_not_accumulate(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([3.0]))
        out = ad.reduce_sum(ad.mul(x, x))
        g1 = ad.backward(tape, out).wrt(x)
        g2 = ad.backward(tape, out).wrt(x)
        np.testing.assert_array_equal(g1, g2)

    def test_mixed_tapes_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        x = ad.new_param(t1, np.ones(2))
        y = ad.new_param(t2, np.ones(2))
        with pytest.raises(ValueError):
            ad.add(x, y)

    def test_backward_rejects_nonscalar_seed(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.ones(3))
        with pytest.raises(ValueError):
            ad.backward(tape, x)

    def test_backward_rejects_foreign_seed(self):
        t1, t2 = ad.Tape(), ad.Tape()
        x = ad.new_param(t1, np.ones(1))
        s = ad.reduce_sum(x)
        with pytest.raises(ValueError):
            ad.backward(t2, s)

    def test_new_param_rejects_nonfinite(self):
        tape = ad.Tape()
        with pytest.raises(ValueError):
            ad.new_param(tape, np.array([1.0, np.nan]))

    def test_new_param_shape_argument(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.arange(6.0), shape=(2, 3))
        assert x.shape == (2, 3)
        with pytest.raises(ValueError):
            ad.new_param(tape, np.arange(5.0), shape=(2, 3))

    def test_values_are_float64(self):
        tape = ad.Tape()
        x = ad.new_param(tape, np.array([1, 2], dtype=np.int32))
        assert x.values.dtype == np.float64
        y = ad.sigmoid(x)
        assert y.values.dtype == np.float64


class TestGradCheckHarness:
    def test_catches_wrong_gradient(self):
        # a primitive with a deliberately broken vjp must be flagged
        def broken(x):
            y = ad.mul(x, x)
            y.tape._vjps[y.node_id] = lambda g: (g * 3.0,)  # truth is 2x
            return ad.reduce_sum(y)

        res = ad.grad_check(broken, np.array([1.5, -0.7]))
        assert res.max_rel_error > 1e-2

    def test_reports_kink_at_base_point(self):
        res = ad.grad_check(
            lambda x: ad.l1_diff(x, np.zeros(2)), np.array([0.0, 1.0])
        )
        assert res.at_kink

    def test_excludes_stencil_kinks(self):
        # perturbing coordinate 0 by +step crosses the relu origin exactly
        step = 1e-5
        res = ad.grad_check(
            lambda x: ad.reduce_sum(ad.leaky_relu(x)),
            np.array([-step, 1.0]),
            step=step,
        )
        assert 0 in res.kink_coords
        assert not np.isnan(res.errors[1])

    def test_end_to_end_composite(self):
        rng = np.random.default_rng(40)
        k1 = rng.normal(size=(3, 3, 1, 4)) * 0.4
        w = rng.normal(size=(4, 4)) * 0.4

        def fn(x):
            tape = x.tape
            h = ad.conv2d(x, k1, stride=2, padding=1)
            h = ad.sigmoid(h)
            pooled = ad.grid_pool_sum(ad.reshape(ad.softplus(h), (4, 4 * 4)), 4)
            v = ad.reshape(pooled, (4,))
            out = ad.matvec(ad.new_param(tape, w), v)
            return ad.reduce_sum(ad.mul(out, out))

        res = ad.grad_check(fn, rng.normal(size=(8, 8, 1)))
        assert res.max_rel_error <= 1e-5
