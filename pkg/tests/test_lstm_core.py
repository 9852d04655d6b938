import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skilleval import lstm_core
from skilleval.lstm_core import AdamConfig, AdamState, adam_step, backward, forward, grad_check, init_params


def naive_forward(net, inputs):
    """Per-unit scalar LSTM, written independently of the vectorised path."""
    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    seq = [list(map(float, x)) for x in inputs]
    for layer in net.layers:
        H, I = layer.hidden_dim, layer.input_dim
        W, b = layer.W.tolist(), layer.b.tolist()
        h, c = [0.0] * H, [0.0] * H
        outs = []
        for x in seq:
            xh = x + h
            pre = [sum(W[r][j] * xh[j] for j in range(I + H)) + b[r] for r in range(4 * H)]
            new_c, new_h = [], []
            for u in range(H):
                i, f, o = sig(pre[u]), sig(pre[H + u]), sig(pre[2 * H + u])
                g = math.tanh(pre[3 * H + u])
                cu = f * c[u] + i * g
                new_c.append(cu)
                new_h.append(o * math.tanh(cu))
            h, c = new_h, new_c
            outs.append(h)
        seq = outs
    return np.array(seq)


def toy_problem(seed=0, T=7):
    rng = np.random.default_rng(seed)
    net = init_params(6, [5, 5], seed)
    x = rng.normal(size=(T, 6))
    R = rng.normal(size=(T, 5))
    return net, x, R


def central_differences(params, loss, eps=1e-5):
    """Independent finite-difference oracle over every coordinate."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss()
            flat[j] = orig - eps
            down = loss()
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_rel(a, b, floor=1e-8):
    return max(float(np.max(np.abs(a[k] - b[k]) / np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)))
               for k in a)


class TestForward:
    def test_zero_parameters_give_zero_hidden(self, rng):
        net = init_params(4, [3, 3], 0)
        for layer in net.layers:
            layer.W[:] = 0
            layer.b[:] = 0
        fwd = forward(net, rng.normal(size=(5, 4)))
        for h in fwd.hidden:
            assert not np.any(h)

    def test_prefix_causality(self, rng):
        net = init_params(4, [6, 6], 1)
        x = rng.normal(size=(2, 4))
        a = forward(net, x[:1])
        b = forward(net, x)
        for la, lb in zip(a.hidden, b.hidden):
            assert np.array_equal(la[0], lb[0])

    def test_matches_naive_oracle(self, rng):
        net = init_params(3, [4, 2, 3], 5)
        for layer in net.layers:
            layer.b[:] = rng.normal(size=layer.b.shape) * 0.3
        x = rng.normal(size=(6, 3))
        np.testing.assert_allclose(forward(net, x).top, naive_forward(net, x), atol=1e-12, rtol=0)

    def test_repeat_is_bit_identical(self, rng):
        net = init_params(4, [5], 2)
        x = rng.normal(size=(9, 4))
        assert forward(net, x).top.tobytes() == forward(net, x).top.tobytes()

    def test_ranges(self, rng):
        net = init_params(4, [8, 8], 3)
        fwd = forward(net, rng.normal(size=(20, 4)) * 5)
        for cache in fwd.caches:
            assert np.all((cache.gates[:, :24] > 0) & (cache.gates[:, :24] < 1))
            assert np.all(np.abs(cache.h) < 1)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="input dim"):
            forward(init_params(4, [3], 0), rng.normal(size=(5, 3)))

    def test_chained_dims_validated(self):
        a, b = init_params(4, [3], 0).layers[0], init_params(5, [2], 0).layers[0]
        with pytest.raises(ValueError, match="does not match"):
            lstm_core.StackedLstm([a, b])


class TestBackward:
    def test_gradients_match_finite_differences(self):
        net, x, R = toy_problem()
        fwd = forward(net, x)
        analytic, dx = backward(net, fwd, R)
        numeric = central_differences(net.parameters(), lambda: float(np.sum(forward(net, x).top * R)))
        assert max_rel(analytic, numeric) <= 1e-4
        # input gradients too
        xs = {"x": x}
        num_x = central_differences(xs, lambda: float(np.sum(forward(net, x).top * R)))
        assert max_rel({"x": dx}, num_x) <= 1e-4

    def test_lower_layer_upstream(self):
        net, x, R = toy_problem(seed=3)
        R0 = np.random.default_rng(9).normal(size=(7, 5))

        def loss():
            f = forward(net, x)
            return float(np.sum(f.top * R) + np.sum(f.hidden[0] * R0))

        analytic, _ = backward(net, forward(net, x), {0: R0, 1: R})
        assert max_rel(analytic, central_differences(net.parameters(), loss)) <= 1e-4

    def test_zero_upstream(self):
        net, x, R = toy_problem()
        grads, dx = backward(net, forward(net, x), np.zeros_like(R))
        assert all(not np.any(g) for g in grads.values()) and not np.any(dx)

    def test_additivity(self):
        net, x, R = toy_problem()
        g1, _ = backward(net, forward(net, x), R)
        batch = [backward(net, forward(net, x), R)[0] for _ in range(2)]
        for k in g1:
            assert np.array_equal(batch[0][k] + batch[1][k], 2 * g1[k])

    def test_cache_mismatch(self):
        net, x, R = toy_problem()
        other = init_params(6, [5], 0)
        with pytest.raises(ValueError):
            backward(other, forward(net, x), R)


class TestInit:
    def test_deterministic(self):
        a, b = init_params(8, [16, 16], 11), init_params(8, [16, 16], 11)
        for k in a.parameters():
            assert np.array_equal(a.parameters()[k], b.parameters()[k])

    def test_different_seeds(self):
        assert not np.array_equal(init_params(8, [16], 1).layers[0].W, init_params(8, [16], 2).layers[0].W)

    def test_biases_and_range(self):
        net = init_params(8, [16, 4], 0)
        for layer in net.layers:
            H = layer.hidden_dim
            assert np.all(layer.b[H : 2 * H] == 1.0)
            assert not np.any(layer.b[:H]) and not np.any(layer.b[2 * H :])
            assert np.max(np.abs(layer.W)) <= 1 / math.sqrt(H)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self, rng):
        p = {"w": rng.normal(size=(3, 2))}
        before = p["w"].copy()
        adam_step(p, {"w": np.zeros((3, 2))}, AdamState(), AdamConfig())
        assert np.array_equal(p["w"], before)

    def test_constant_gradient_step_tends_to_lr(self):
        """Scalar recurrence of bias-corrected Adam iterated by hand."""
        lr, b1, b2, eps, g = 1e-2, 0.9, 0.999, 1e-8, -0.3
        m = v = 0.0
        theta = 0.0
        expected = []
        for t in range(1, 201):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            step = lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            theta -= step
            expected.append(theta)
        p = {"w": np.zeros(1)}
        state = AdamState()
        cfg = AdamConfig(lr=lr, beta1=b1, beta2=b2, eps=eps, clip_norm=10.0)
        got = []
        for _ in range(200):
            prev = p["w"][0]
            adam_step(p, {"w": np.array([g])}, state, cfg)
            got.append(p["w"][0])
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        last_step = got[-1] - got[-2]
        assert abs(abs(last_step) - lr) < 1e-6 and np.sign(last_step) == -np.sign(g)

    def test_clipping(self, rng):
        g = {"a": rng.normal(size=5), "b": rng.normal(size=(2, 2))}
        norm = lstm_core.global_norm(g)
        g = {k: v * 10 / norm for k, v in g.items()}
        clipped, before = lstm_core.clip_gradients(g, 1.0)
        assert abs(before - 10) < 1e-12
        assert abs(lstm_core.global_norm(clipped) - 1.0) < 1e-12

    def test_non_finite_gradient_aborts(self):
        with pytest.raises(FloatingPointError):
            adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 1.0])}, AdamState(), AdamConfig())


class TestGradCheck:
    def _setup(self, corrupt=False):
        net, x, R = toy_problem()

        def lg():
            fwd = forward(net, x)
            g, _ = backward(net, fwd, R)
            if corrupt:
                g["lstm.1.W"] = g["lstm.1.W"].copy()
                g["lstm.1.W"][5:10] += 1e-3  # forget-gate rows of the top layer
            return float(np.sum(fwd.top * R)), g

        return net, lg

    def test_correct_implementation_passes(self):
        net, lg = self._setup()
        r = grad_check(net.parameters(), lg, eps=1e-5, tol=1e-4)
        assert r.passed and r.max_rel_err <= 1e-4 and r.n_checked == 460

    def test_corrupted_forget_gradient_fails(self):
        net, lg = self._setup(corrupt=True)
        r = grad_check(net.parameters(), lg)
        assert not r.passed
        assert r.worst[0][0] == "lstm.1.W" and 5 <= r.worst[0][1][0] < 10

    def test_large_epsilon(self):
        net, lg = self._setup()
        small = grad_check(net.parameters(), lg, eps=1e-5)
        big = grad_check(net.parameters(), lg, eps=1e-1)
        assert math.isfinite(big.max_rel_err) and big.max_rel_err > small.max_rel_err

    def test_parameters_restored(self):
        net, lg = self._setup()
        before = {k: v.copy() for k, v in net.parameters().items()}
        grad_check(net.parameters(), lg)
        for k, v in net.parameters().items():
            assert np.array_equal(v, before[k])


@settings(max_examples=15, deadline=None)
@given(T=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_prefix_property(T, seed):
    r = np.random.default_rng(seed)
    net = init_params(3, [4, 4], seed)
    x = r.normal(size=(T + 2, 3))
    full = forward(net, x).top
    assert np.array_equal(forward(net, x[:T]).top, full[:T])


def test_checkpoint_round_trip(tmp_path):
    from skilleval.checkpoint import read_tensors, write_tensors

    net = init_params(5, [4, 3], 8)
    write_tensors(tmp_path / "n.ckpt", "test", net.parameters(), {"k": 1})
    assert (tmp_path / "n.ckpt").read_text().splitlines()[0] == "SKILLEVAL-LSTM v1 role=test"
    role, meta, tensors = read_tensors(tmp_path / "n.ckpt")
    back = lstm_core.stacked_from_tensors(tensors)
    assert role == "test" and meta == {"k": 1}
    for k, v in net.parameters().items():
        assert back.parameters()[k].tobytes() == v.tobytes()
