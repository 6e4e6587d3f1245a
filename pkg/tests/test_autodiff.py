"""Tests for the reverse-mode tape, networks, and optimizers."""

import numpy as np
import pytest

from credence import autodiff as ad

from oracles import central_difference_gradient, relative_gradient_error


class TestForwardValues:
    def test_relu(self):
        assert ad.relu(ad.Var(-1.0)).item() == 0.0
        assert ad.relu(ad.Var(2.0)).item() == 2.0

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(ad.Var(0.0)).item() == 0.5

    def test_max_reduce_records_first_attaining_index(self):
        v = ad.Var([0.2, 0.8, 0.5])
        out = ad.vmax(v)
        assert out.item() == 0.8
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [0.0, 1.0, 0.0])

    def test_min_reduce_tie_breaks_to_first(self):
        v = ad.Var([0.3, 0.3, 0.9])
        out = ad.vmin(v)
        ad.backward(out)
        np.testing.assert_array_equal(v.grad, [1.0, 0.0, 0.0])

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ad.log(ad.Var([0.5, 0.0]))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ad.matmul(ad.Var(np.ones((2, 3))), ad.Var(np.ones((2, 3))))


class TestBackward:
    def test_sigmoid_derivative_at_zero(self):
        x = ad.Var(0.0)
        ad.backward(ad.sigmoid(x))
        assert x.grad == pytest.approx(0.25)

    def test_max_subgradient_choice(self):
        x = ad.Var([0.2, 0.8])
        ad.backward(ad.vmax(x))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_nonattaining_argument_is_flat(self):
        # Perturbing a non-attaining input by less than the gap must leave
        # the reduction output exactly unchanged.
        base = np.array([0.2, 0.8, 0.5])
        h = 0.05
        for delta in (h, -h):
            perturbed = base.copy()
            perturbed[0] += delta
            assert ad.vmax(ad.Var(perturbed)).item() == ad.vmax(ad.Var(base)).item()

    def test_reused_subexpression_accumulates(self):
        x = ad.Var(3.0)
        y = ad.add(ad.mul(x, x), x)  # x^2 + x
        ad.backward(y)
        assert x.grad == pytest.approx(7.0)

    def test_broadcast_add_gradient(self):
        a = ad.Var(np.ones((3, 2)))
        b = ad.Var(np.zeros(2))
        ad.backward(ad.vsum(ad.add(a, b)))
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])

    def test_backward_requires_scalar(self):
        with pytest.raises(ValueError):
            ad.backward(ad.Var(np.ones(3)))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_mlp_gradcheck_against_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = ad.Mlp([4, 8, 8, 1], rng=rng)
        x = rng.normal(size=(5, 4))
        target = rng.normal(size=(5, 1))
        shapes = [p.shape for p in net.parameters]

        def unflatten(flat):
            out = []
            pos = 0
            for shape in shapes:
                n = int(np.prod(shape))
                out.append(flat[pos : pos + n].reshape(shape))
                pos += n
            return out

        def loss_from_flat(flat):
            net2 = ad.Mlp(net.sizes, rng=np.random.default_rng(0))
            net2.set_parameters(unflatten(flat))
            pred = net2.forward(x)
            return float(np.mean((pred - target) ** 2))

        def loss_fn(param_vars):
            pred = net.forward_var(x, param_vars)
            diff = ad.sub(pred, target)
            return ad.vmean(ad.mul(diff, diff))

        _, grads = ad.gradient_of(loss_fn, net.parameters)
        flat0 = np.concatenate([p.ravel() for p in net.parameters])
        numeric = central_difference_gradient(loss_from_flat, flat0, h=1e-5)
        analytic = np.concatenate([g.ravel() for g in grads])
        assert relative_gradient_error(analytic, numeric) <= 1e-3

    def test_composite_ops_gradcheck(self):
        rng = np.random.default_rng(7)
        x0 = rng.uniform(0.2, 0.9, size=6)

        def build(v):
            a = ad.logsigmoid(ad.mul(v, 3.0))
            b = ad.logsumexp(ad.mul(v, v), axis=0)
            c = ad.vmax(ad.stack([ad.exp(v), ad.sqrt(v)], axis=0), axis=0)
            return ad.add(ad.add(ad.vsum(a), b), ad.vmean(c))

        def f(flat):
            return build(ad.Var(flat)).item()

        v = ad.Var(x0)
        ad.backward(build(v))
        numeric = central_difference_gradient(f, x0, h=1e-6)
        assert relative_gradient_error(v.grad, numeric) <= 1e-3

    def test_clamp_gradient_zero_outside(self):
        x = ad.Var([0.5, 2.0, -1.0])
        ad.backward(ad.vsum(ad.clamp(x, 0.0, 1.0)))
        np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0])


class TestOptimizers:
    def test_zero_gradient_keeps_params(self):
        p = np.array([1.0, -2.0])
        state = ad.AdamState.for_parameters([p])
        ad.adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_single_step_descends_quadratic(self):
        p = np.array(1.0)
        state = ad.AdamState.for_parameters([p])
        ad.adam_step([p], [np.array(2.0)], state, lr=0.1)
        assert p**2 < 1.0

    def test_quadratic_bowl_converges(self):
        p = np.array([3.0, -2.0])
        state = ad.AdamState.for_parameters([p])
        for _ in range(5000):
            ad.adam_step([p], [2.0 * p], state, lr=1e-2)
            if np.max(np.abs(p)) < 1e-6:
                break
        assert np.max(np.abs(p)) < 1e-6

    def test_sgd_step(self):
        p = np.array(4.0)
        ad.sgd_step([p], [np.array(2.0)], lr=0.5)
        assert p == pytest.approx(3.0)

    def test_training_is_bit_deterministic(self):
        def run():
            rng = np.random.default_rng(123)
            net = ad.Mlp([3, 6, 1], rng=rng)
            x = np.random.default_rng(5).normal(size=(8, 3))
            state = ad.AdamState.for_parameters(net.parameters)
            for _ in range(50):
                params = net.parameters

                def loss_fn(pv):
                    out = net.forward_var(x, pv)
                    return ad.vmean(ad.mul(out, out))

                _, grads = ad.gradient_of(loss_fn, params)
                ad.adam_step(params, grads, state)
            return np.concatenate([p.ravel() for p in net.parameters])

        first, second = run(), run()
        np.testing.assert_array_equal(first, second)
