"""Unit tests for the flat-parameter MLP core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collusim.errors import ValidationError
from collusim.nn import (
    Adam,
    Mlp,
    init_mlp,
    log_softmax,
    mlp_forward,
    mlp_grad,
    param_count,
    sample_action,
    softmax,
    zeros_mlp,
)


def oracle_forward(layer_sizes, params, x):
    """Straight-line re-implementation: unpack weights, apply layers."""
    off = 0
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(layer_sizes) - 1
    for i, (n_in, n_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        w = params[off : off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = params[off : off + n_out]
        off += n_out
        h = w @ h + b
        if i < n_layers - 1:
            h = np.tanh(h)
    return h


def fd_param_grad(net, x, upstream, h=1e-5):
    """Central finite differences of <upstream, forward(x)> w.r.t. params."""
    g = np.zeros_like(net.params)
    for i in range(net.params.size):
        old = net.params[i]
        net.params[i] = old + h
        fp = float(np.dot(upstream, mlp_forward(net, x)))
        net.params[i] = old - h
        fm = float(np.dot(upstream, mlp_forward(net, x)))
        net.params[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return np.max(np.abs(a - b) / denom)


class TestForward:
    def test_zero_params_give_zero_output(self):
        net = zeros_mlp((4, 8, 3))
        assert np.array_equal(mlp_forward(net, np.ones(4)), np.zeros(3))

    def test_identity_single_layer(self):
        net = zeros_mlp((3, 3))
        w, _b = net.weights()[0]
        w[...] = np.eye(3)
        x = np.array([0.3, -1.2, 7.0])
        assert np.array_equal(mlp_forward(net, x), x)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(0)
        net = init_mlp((4, 8, 3), rng)
        x = rng.standard_normal(4)
        got = mlp_forward(net, x)
        want = oracle_forward(net.layer_sizes, net.params, x)
        assert np.max(np.abs(got - want)) < 1e-10

    def test_batched_forward_matches_rowwise(self):
        rng = np.random.default_rng(1)
        net = init_mlp((5, 7, 2), rng)
        xs = rng.standard_normal((6, 5))
        batch = mlp_forward(net, xs)
        rows = np.stack([mlp_forward(net, x) for x in xs])
        # batched BLAS and row-wise paths may differ in the last bits
        assert np.allclose(batch, rows, atol=1e-12, rtol=0)

    def test_dimension_mismatch_raises(self):
        net = zeros_mlp((4, 2))
        with pytest.raises(ValidationError):
            mlp_forward(net, np.zeros(5))

    def test_param_count(self):
        assert param_count((4, 8, 3)) == 4 * 8 + 8 + 8 * 3 + 3
        with pytest.raises(ValidationError):
            Mlp((4, 8, 3), np.zeros(5))


class TestGrad:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(2)
        net = init_mlp((3, 5, 2), rng)
        g, dx = mlp_grad(net, rng.standard_normal(3), np.zeros(2))
        assert not g.any() and not dx.any()

    def test_single_linear_layer_rows(self):
        net = zeros_mlp((4, 3))
        x = np.array([1.0, 2.0, -3.0, 0.5])
        for j in range(3):
            upstream = np.zeros(3)
            upstream[j] = 1.0
            g, dx = mlp_grad(net, x, upstream)
            gw = Mlp(net.layer_sizes, g).weights()[0][0]
            assert np.array_equal(gw[j], x)
            assert np.array_equal(np.delete(gw, j, axis=0), np.zeros((2, 4)))

    @pytest.mark.parametrize("shape", [(3, 2), (4, 8, 3), (6, 16, 16, 4), (10, 5, 1)])
    def test_matches_finite_differences(self, shape):
        rng = np.random.default_rng(hash(shape) % 2**32)
        net = init_mlp(shape, rng)
        x = rng.standard_normal(shape[0])
        upstream = rng.standard_normal(shape[-1])
        g, _ = mlp_grad(net, x, upstream)
        g_fd = fd_param_grad(net, x, upstream)
        assert rel_err(g, g_fd) < 1e-4

    def test_input_grad_matches_fd(self):
        rng = np.random.default_rng(5)
        net = init_mlp((4, 6, 2), rng)
        x = rng.standard_normal(4)
        upstream = rng.standard_normal(2)
        _, dx = mlp_grad(net, x, upstream)
        h = 1e-5
        fd = np.zeros(4)
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd[i] = (
                np.dot(upstream, mlp_forward(net, xp)) - np.dot(upstream, mlp_forward(net, xm))
            ) / (2 * h)
        assert rel_err(dx, fd) < 1e-4

    def test_batched_grad_is_sum_of_rows(self):
        rng = np.random.default_rng(6)
        net = init_mlp((3, 4, 2), rng)
        xs = rng.standard_normal((5, 3))
        ups = rng.standard_normal((5, 2))
        g_batch, dx_batch = mlp_grad(net, xs, ups)
        g_sum = sum(mlp_grad(net, x, u)[0] for x, u in zip(xs, ups))
        assert np.allclose(g_batch, g_sum, atol=1e-12)
        for i in range(5):
            assert np.allclose(dx_batch[i], mlp_grad(net, xs[i], ups[i])[1], atol=1e-12)


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        for n in (2, 5, 11):
            assert np.allclose(softmax(np.zeros(n)), np.full(n, 1.0 / n), atol=1e-15)

    def test_closed_form(self):
        assert np.allclose(softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75], atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance_and_simplex(self, logits, c):
        z = np.array(logits)
        p = softmax(z)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p > 0)
        assert np.allclose(p, softmax(z + c), atol=1e-12)

    def test_log_softmax_consistent(self):
        z = np.array([1.0, -2.0, 0.5])
        assert np.allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-14)


class TestSampling:
    def test_degenerate_distribution(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            idx, logp = sample_action(np.array([1.0, 0.0, 0.0]), rng)
            assert idx == 0 and logp == 0.0

    def test_uniform_frequencies_within_3_sigma(self):
        rng = np.random.default_rng(123)
        n = 100_000
        counts = np.zeros(4)
        p = np.full(4, 0.25)
        for _ in range(n):
            idx, _ = sample_action(p, rng)
            counts[idx] += 1
        sigma = np.sqrt(n * 0.25 * 0.75)
        assert np.all(np.abs(counts - n * 0.25) < 3 * sigma)

    def test_same_seed_same_sequence(self):
        p = softmax(np.array([0.1, 0.7, -0.3]))
        a = [sample_action(p, np.random.default_rng(9))[0] for _ in range(1)]
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            runs.append([sample_action(p, rng)[0] for _ in range(50)])
        assert runs[0] == runs[1]
        del a


class TestAdam:
    def test_descends_quadratic(self):
        params = np.array([5.0, -3.0])
        opt = Adam(lr=0.1)
        for _ in range(500):
            opt.step(params, 2.0 * params)  # d/dx of x^2
        assert np.all(np.abs(params) < 1e-2)

    def test_deterministic(self):
        def run():
            params = np.array([1.0, 2.0, 3.0])
            opt = Adam(lr=0.01)
            rng = np.random.default_rng(3)
            for _ in range(50):
                opt.step(params, rng.standard_normal(3))
            return params

        assert np.array_equal(run(), run())


class TestInit:
    def test_deterministic_for_equal_seed(self):
        a = init_mlp((6, 16, 3), np.random.default_rng(11))
        b = init_mlp((6, 16, 3), np.random.default_rng(11))
        assert np.array_equal(a.params, b.params)

    def test_orthogonal_rows(self):
        net = init_mlp((16, 8), np.random.default_rng(1))
        w, _ = net.weights()[0]
        assert np.allclose(w @ w.T, np.eye(8), atol=1e-10)
