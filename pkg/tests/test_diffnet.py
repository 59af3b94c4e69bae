import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from internerf import diffnet as dn
from internerf.errors import ContractError


def numeric_grad(f, x, h=1e-4):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestLinear:
    def test_identity(self):
        layer = dn.LinearLayer(np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(dn.linear_apply(layer, np.array([3.0, 4.0])), [3, 4])

    def test_zero_weights(self):
        layer = dn.LinearLayer(np.zeros((2, 2)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(dn.linear_apply(layer, np.array([-7.0, 0.3])), [1, 2])

    def test_matrix(self):
        layer = dn.LinearLayer(np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(dn.linear_apply(layer, np.array([1.0, 1.0])), [3, 2])

    def test_shape_mismatch(self):
        layer = dn.LinearLayer(np.eye(2), np.zeros(2))
        with pytest.raises(ContractError):
            dn.linear_apply(layer, np.ones(3))

    def test_batch_rows(self, rng):
        layer = dn.LinearLayer(rng.normal(size=(3, 4)), rng.normal(size=3))
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(dn.linear_apply(layer, x), x @ layer.W.T + layer.b)


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(dn.activation_apply("relu", np.array([-1.0, 2.0])), [0, 2])

    def test_sigmoid_zero(self):
        assert dn.activation_apply("sigmoid", np.array([0.0]))[0] == 0.5

    def test_softplus_zero(self):
        assert dn.activation_apply("softplus", np.array([0.0]))[0] == pytest.approx(math.log(2), abs=1e-12)

    def test_softplus_large_inputs_stay_finite(self):
        out = dn.activation_apply("softplus", np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(out)) and out[1] == 800.0


class TestDirEncode:
    def test_degree_one(self):
        out = dn.dir_encode(np.array([1.0, 0.0, 0.0]), 1)
        np.testing.assert_allclose(out, [math.sin(1), 0, 0, math.cos(1), 1, 1])

    def test_degree_zero_is_empty(self):
        assert dn.dir_encode(np.array([0.0, 0.0, 1.0]), 0).shape == (0,)

    def test_non_unit_rejected(self):
        with pytest.raises(ContractError):
            dn.dir_encode(np.array([1.0, 1.0, 0.0]), 2)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3), st.integers(0, 6))
    def test_range(self, a, b, c, degree):
        d = np.array([a, b, c])
        d /= np.linalg.norm(d)
        out = dn.dir_encode(d, degree)
        assert out.shape == (6 * degree,)
        assert np.all(np.abs(out) <= 1)


def _geo(rng, width=6, hidden=5, scale=1.0):
    return dn.GeometryParams(
        dn.LinearLayer(scale * rng.normal(size=(hidden, width)), scale * rng.normal(size=hidden)),
        dn.LinearLayer(scale * rng.normal(size=(1, hidden)), scale * rng.normal(size=1)),
    )


class TestMLPs:
    def test_zero_geometry_gives_ln2(self):
        geo = dn.GeometryParams(dn.LinearLayer(np.zeros((4, 3)), np.zeros(4)), dn.LinearLayer(np.zeros((1, 4)), np.zeros(1)))
        tau, bottleneck = dn.geometry_mlp(geo, np.ones(3))
        assert tau == pytest.approx(math.log(2))
        np.testing.assert_array_equal(bottleneck, 0)

    def test_zero_appearance_is_grey(self):
        app = dn.AppearanceParams([dn.LinearLayer(np.zeros((4, 5)), np.zeros(4)), dn.LinearLayer(np.zeros((3, 4)), np.zeros(3))])
        np.testing.assert_array_equal(dn.appearance_mlp(app, np.ones(3), np.ones(2)), [0.5, 0.5, 0.5])

    @given(st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_tau_nonnegative_and_rgb_open_unit(self, seed):
        rng = np.random.default_rng(seed)
        tau, b = dn.geometry_mlp(_geo(rng, scale=3.0), rng.normal(size=(7, 6)) * 3)
        assert np.all(tau >= 0)
        # moderate logits so that the open interval survives float rounding
        b = np.clip(b, 0, 1)
        app = dn.AppearanceParams([dn.LinearLayer(0.5 * rng.normal(size=(3, 5 + 6)), rng.normal(size=3))])
        rgb = dn.appearance_mlp(app, b, rng.uniform(-1, 1, size=(7, 6)))
        assert np.all((rgb > 0) & (rgb < 1))

    def test_geometry_chain_rule(self, rng):
        geo = _geo(rng)
        z0 = rng.normal(size=6)
        tape = dn.GradTape()
        z = tape.var(z0)
        tau, _ = dn.geometry_mlp(geo, z)
        g = dn.backprop(tape, tau)[z]
        expect = numeric_grad(lambda v: float(dn.geometry_mlp(geo, v)[0]), z0)
        np.testing.assert_allclose(g, expect, rtol=1e-6, atol=1e-9)

    def test_appearance_weight_gradients(self, rng):
        Ws = [rng.normal(size=(4, 9)), rng.normal(size=(3, 4))]
        bs = [rng.normal(size=4), rng.normal(size=3)]
        bott, denc = rng.normal(size=3), rng.normal(size=6)

        def loss_of(params):
            layers = [dn.LinearLayer(params[2 * i], params[2 * i + 1]) for i in range(2)]
            return dn.sum_(dn.appearance_mlp(dn.AppearanceParams(layers), bott, denc))

        values = [Ws[0], bs[0], Ws[1], bs[1]]
        tape = dn.GradTape()
        leaves = [tape.var(v) for v in values]
        grads = dn.backprop(tape, loss_of(leaves))
        for k, leaf in enumerate(leaves):
            def f(v, k=k):
                vals = list(values)
                vals[k] = v
                return float(loss_of(vals))

            num = numeric_grad(f, values[k])
            rel = np.linalg.norm(grads[leaf] - num) / max(np.linalg.norm(num), 1e-12)
            assert rel < 1e-4


class TestBackprop:
    def test_square(self):
        tape = dn.GradTape()
        x = tape.var(np.array(3.0))
        assert dn.backprop(tape, x * x)[x] == 6.0

    def test_product(self):
        tape = dn.GradTape()
        x, y = tape.var(np.array(2.0)), tape.var(np.array(5.0))
        g = dn.backprop(tape, x * y)
        assert (g[x], g[y]) == (5.0, 2.0)

    def test_unused_leaf_gets_zero(self):
        tape = dn.GradTape()
        x, y = tape.var(np.array(2.0)), tape.var(np.ones(3))
        g = dn.backprop(tape, dn.square(x))
        np.testing.assert_array_equal(g[y], np.zeros(3))

    def test_output_not_on_tape(self):
        tape, other = dn.GradTape(), dn.GradTape()
        y = other.var(np.array(1.0))
        with pytest.raises(ContractError):
            dn.backprop(tape, dn.square(y))
        with pytest.raises(ContractError):
            dn.backprop(tape, np.array(1.0))

    def test_non_scalar_output(self):
        tape = dn.GradTape()
        x = tape.var(np.ones(3))
        with pytest.raises(ContractError):
            dn.backprop(tape, x * 2.0)

    def test_mixed_tapes_rejected(self):
        a, b = dn.GradTape().var(np.array(1.0)), dn.GradTape().var(np.array(1.0))
        with pytest.raises(ContractError):
            dn.add(a, b)

    def test_replay_is_bit_exact(self, rng):
        tape = dn.GradTape()
        x = tape.var(rng.normal(size=(4, 3)))
        W = tape.var(rng.normal(size=(2, 3)))
        out = dn.sum_(dn.sigmoid(dn.linear(x, W, np.zeros(2))))
        values = tape.replay()
        assert values[id(out)] == out.value

    def test_broadcast_and_indexing_grads(self, rng):
        a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=4)
        idx = np.array([[0, 0, 2], [1, 3, 3], [2, 1, 0]])

        def f(a, b):
            s = dn.mul(dn.add(a, b), dn.cos(a))
            t = dn.take_along_axis(dn.cumsum_exclusive(s, axis=-1), idx, -1)
            return dn.sum_(dn.square(dn.concat([t, dn.getitem(s, (slice(None), slice(0, 2)))], axis=-1)))

        tape = dn.GradTape()
        a, b = tape.var(a0), tape.var(b0)
        g = dn.backprop(tape, f(a, b))
        np.testing.assert_allclose(g[a], numeric_grad(lambda v: float(f(v, b0)), a0), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(g[b], numeric_grad(lambda v: float(f(a0, v)), b0), rtol=1e-6, atol=1e-8)
