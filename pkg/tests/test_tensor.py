import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ongcmp import tensor as T
from ongcmp.gradcases import CASES


def conv_loops(x, w, stride=1, pad=0):
    """Four nested loops straight from the cross-correlation definition."""
    c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((k, oh, ow))
    for o in range(k):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ch in range(c):
                    for a in range(kh):
                        for e in range(kw):
                            acc += xp[ch, i * stride + a, j * stride + e] * w[o, ch, a, e]
                out[o, i, j] = acc
    return out


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 5, 6))
    out, _ = T.conv2d(x, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(out, x)


def test_conv_zero_kernel():
    x = np.random.default_rng(1).standard_normal((2, 5, 5))
    out, _ = T.conv2d(x, np.zeros((3, 2, 3, 3)), stride=2, pad=1)
    assert out.shape == (3, 3, 3)
    assert not out.any()


def test_conv_4x4_matches_loops():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 4, 4))
    w = rng.standard_normal((1, 1, 3, 3))
    out, _ = T.conv2d(x, w)
    assert out.shape == (1, 2, 2)
    np.testing.assert_allclose(out, conv_loops(x, w), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv_random_shapes_match_loops(stride, pad):
    rng = np.random.default_rng(10 * stride + pad)
    c, k, kh, kw = 3, 2, 3, 2
    h = stride * 2 + kh - 2 * pad + stride
    wd = stride * 3 + kw - 2 * pad
    h, wd = max(h, kh), max(wd, kw)
    h += (h + 2 * pad - kh) % stride
    wd += (wd + 2 * pad - kw) % stride
    x = rng.standard_normal((c, h, wd))
    w = rng.standard_normal((k, c, kh, kw))
    b = rng.standard_normal(k)
    out, _ = T.conv2d(x, w, b, stride, pad)
    np.testing.assert_allclose(out, conv_loops(x, w, stride, pad) + b[:, None, None], atol=1e-12)


def test_conv_batch_equals_single():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    batch, _ = T.conv2d(x, w, pad=1)
    for i in range(4):
        one, _ = T.conv2d(x[i], w, pad=1)
        np.testing.assert_allclose(batch[i], one, atol=1e-12)


@pytest.mark.parametrize(
    "xshape,wshape,stride,pad",
    [
        ((2, 5, 5), (1, 3, 3, 3), 1, 0),  # channel mismatch
        ((1, 2, 2), (1, 1, 3, 3), 1, 0),  # kernel larger than input
        ((1, 6, 6), (1, 1, 3, 3), 2, 0),  # (6 - 3) / 2 not integral
    ],
)
def test_conv_errors(xshape, wshape, stride, pad):
    with pytest.raises(ValueError):
        T.conv2d(np.zeros(xshape), np.zeros(wshape), stride=stride, pad=pad)


def test_conv_backward_adjoint():
    # <conv(x), r> == <x, conv_backward(r)> for the input gradient
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    out, cache = T.conv2d(x, w, stride=2, pad=1)
    r = rng.standard_normal(out.shape)
    dx, dw, db = T.conv2d_backward(r, cache)
    assert db is None
    assert math.isclose(np.sum(out * r), np.sum(x * dx), rel_tol=1e-10)
    assert math.isclose(np.sum(out * r), np.sum(w * dw), rel_tol=1e-10)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def _zero_lstm(d, h):
    return T.LstmParams(T.Tensor(np.zeros((d, 4 * h))), T.Tensor(np.zeros((h, 4 * h))), T.Tensor(np.zeros(4 * h)))


def test_lstm_zero_params():
    p = _zero_lstm(4, 3)
    h, c, _ = T.lstm_step(np.ones(4), np.zeros(3), np.zeros(3), p)
    assert not h.any() and not c.any()


def test_lstm_default_hidden_256():
    p = T.LstmParams.init(np.random.default_rng(0), 8)
    h, c, _ = T.lstm_step(np.ones(8, np.float32), np.zeros(256, np.float32), np.zeros(256, np.float32), p)
    assert h.shape == (256,) and c.shape == (256,)


def test_lstm_matches_scalar_equations():
    rng = np.random.default_rng(5)
    d, hd = 4, 3
    p = T.LstmParams.init(rng, d, hd, np.float64)
    x = rng.standard_normal(d)
    h0 = rng.standard_normal(hd)
    c0 = rng.standard_normal(hd)
    h, c, _ = T.lstm_step(x, h0, c0, p)

    wx, wh, b = p.wx.data, p.wh.data, p.b.data

    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    for j in range(hd):
        def pre(gate):
            col = gate * hd + j
            return sum(x[m] * wx[m, col] for m in range(d)) + sum(h0[m] * wh[m, col] for m in range(hd)) + b[col]

        i_g, f_g, o_g, g_g = sig(pre(0)), sig(pre(1)), sig(pre(2)), math.tanh(pre(3))
        c_j = f_g * c0[j] + i_g * g_g
        assert math.isclose(c[j], c_j, rel_tol=1e-12, abs_tol=1e-14)
        assert math.isclose(h[j], o_g * math.tanh(c_j), rel_tol=1e-12, abs_tol=1e-14)


def test_lstm_forward_starts_from_zero_state():
    rng = np.random.default_rng(6)
    p = T.LstmParams.init(rng, 3, 2, np.float64)
    xs = rng.standard_normal((4, 3))
    hs, _ = T.lstm_forward(xs, p)
    h1, _, _ = T.lstm_step(xs[0], np.zeros(2), np.zeros(2), p)
    np.testing.assert_array_equal(hs[0], h1)


def test_lstm_dimension_errors():
    p = _zero_lstm(4, 3)
    with pytest.raises(ValueError):
        T.lstm_step(np.ones(5), np.zeros(3), np.zeros(3), p)
    with pytest.raises(ValueError):
        T.lstm_step(np.ones(4), np.zeros(2), np.zeros(3), p)
    with pytest.raises(ValueError):
        T.LstmParams(T.Tensor(np.zeros((4, 12))), T.Tensor(np.zeros((2, 12))), T.Tensor(np.zeros(12)))


def test_sigmoid_extremes_finite():
    z = np.array([-1000.0, 0.0, 1000.0])
    np.testing.assert_array_equal(T._sigmoid(z), [0.0, 0.5, 1.0])


# ---------------------------------------------------------------------------
# scores, softmax, cross-entropy
# ---------------------------------------------------------------------------


def _head(w, b):
    return T.LinearHead(T.Tensor(np.asarray(w, float)), T.Tensor(np.asarray(b, float)))


def test_scores_zero_head():
    assert not T.classify_scores(np.ones(4), _head(np.zeros((4, 3)), np.zeros(3))).any()


def test_scores_bias_passthrough():
    np.testing.assert_array_equal(T.classify_scores(np.ones(4), _head(np.zeros((4, 2)), [1, 2])), [1, 2])


def test_scores_match_loops():
    rng = np.random.default_rng(7)
    h, w, b = rng.standard_normal(5), rng.standard_normal((5, 3)), rng.standard_normal(3)
    s = T.classify_scores(h, _head(w, b))
    for n in range(3):
        assert math.isclose(s[n], sum(h[i] * w[i, n] for i in range(5)) + b[n], rel_tol=1e-12)


def test_head_validation():
    with pytest.raises(ValueError):
        _head(np.zeros((4, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        T.classify_scores(np.ones(3), _head(np.zeros((4, 2)), np.zeros(2)))


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(np.zeros(5)), np.full(5, 0.2), atol=1e-15)


def test_softmax_high_precision_oracle():
    mpmath.mp.dps = 50
    exps = [mpmath.e**k for k in (1, 2, 3)]
    total = sum(exps)
    expect = [float(e / total) for e in exps]
    np.testing.assert_allclose(T.softmax(np.array([1.0, 2.0, 3.0])), expect, rtol=1e-14)


def test_softmax_large_scores_stable():
    p = T.softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0], atol=1e-15)


def test_softmax_rejects_non_finite():
    with pytest.raises(T.NonFiniteError):
        T.softmax(np.array([0.0, np.nan]))


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=finite), st.floats(-100, 100))
def test_softmax_simplex_and_shift(s, c):
    p = T.softmax(s)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-6
    np.testing.assert_allclose(T.softmax(s + c), p, atol=1e-9)
    assert T.argmax(s + c) == T.argmax(s) or np.isclose(s[T.argmax(s + c)], s.max())


def test_cross_entropy_matches_direct_formula():
    rng = np.random.default_rng(8)
    s = rng.standard_normal((4, 3))
    y = np.array([0, 2, 1, 2])
    loss, _ = T.cross_entropy(s, y)
    direct = -np.mean([math.log(math.exp(s[i, y[i]]) / sum(math.exp(v) for v in s[i])) for i in range(4)])
    assert math.isclose(loss, direct, rel_tol=1e-12)


def test_argmax_lowest_index_wins():
    assert T.argmax([0.3, 0.5, 0.5, 0.1]) == 1


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def test_grad_check_linear_exact():
    assert CASES["linear"](0) <= 1e-9


@pytest.mark.parametrize("name", sorted(CASES))
def test_grad_check_cases(name):
    assert max(CASES[name](s) for s in range(3)) <= 1e-5


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        T.grad_check(lambda: (0.0, {}), {"w": np.zeros(2, np.float32)})


def test_grad_check_flags_wrong_gradient():
    p = {"w": np.array([1.0, 2.0])}
    err = T.grad_check(lambda: (float(np.sum(p["w"] ** 2)), {"w": p["w"]}), p)
    assert err > 0.4  # analytic gradient off by a factor of two


def test_grad_check_non_finite():
    p = {"w": np.array([0.0])}
    with pytest.raises(T.NonFiniteError):
        T.grad_check(lambda: (float(np.log(p["w"][0] if p["w"][0] > 0 else np.nan)), {"w": p["w"]}), p)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def test_sgd_zero_gradient_unchanged():
    p = {"w": np.array([1.5, -2.0])}
    out = T.sgd_step(p, {"w": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(out["w"], p["w"])


def test_sgd_scalar_arithmetic():
    out = T.sgd_step({"p": np.array(1.0)}, {"p": np.array(2.0)}, 0.1)
    assert math.isclose(float(out["p"]), 0.8, rel_tol=1e-15)


def test_step_decay_at_5000():
    sched = T.StepDecay(0.001, 0.95, 5000)
    assert sched(4999) == 0.001
    assert math.isclose(sched(5000), 0.00095, rel_tol=1e-12)
    assert math.isclose(sched(10000), 0.001 * 0.95**2, rel_tol=1e-12)


def test_sgd_step_uses_schedule():
    out = T.sgd_step({"p": np.array(1.0)}, {"p": np.array(1.0)}, 123.0, T.StepDecay(), 5000)
    assert math.isclose(float(out["p"]), 1 - 0.00095, rel_tol=1e-12)


def test_sgd_rejects_bad_input():
    with pytest.raises(ValueError):
        T.sgd_step({"p": np.array(1.0)}, {"p": np.array(1.0)}, 0.0)
    with pytest.raises(T.NonFiniteError):
        T.sgd_step({"p": np.array(1.0)}, {"p": np.array(np.inf)}, 0.1)


def test_sgd_class_momentum():
    t = T.Tensor(np.array([1.0]))
    opt = T.SGD({"p": t}, T.StepDecay(0.1, 1.0, 1), momentum=0.5)
    opt.step({"p": np.array([1.0])})
    opt.step({"p": np.array([1.0])})
    # velocities 1 then 1.5
    assert math.isclose(t.data[0], 1 - 0.1 - 0.15, rel_tol=1e-12)


def test_adam_first_step_is_lr_sized():
    t = T.Tensor(np.array([1.0, 1.0]))
    opt = T.Adam({"p": t}, T.StepDecay(0.01, 1.0, 1))
    opt.step({"p": np.array([3.0, -0.002])})
    np.testing.assert_allclose(t.data, [0.99, 1.01], rtol=1e-6)


def test_forward_deterministic():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    a, _ = T.conv2d(x, w, pad=1)
    b, _ = T.conv2d(x, w, pad=1)
    assert a.tobytes() == b.tobytes()


def test_tensor_invariants():
    t = T.Tensor(np.zeros((2, 3), np.float32))
    t.zero_grad()
    assert t.grad.shape == t.shape
    with pytest.raises(ValueError):
        T.Tensor(np.zeros((2, 3)), grad=np.zeros(3))
    with pytest.raises(ValueError):
        T.Tensor(np.zeros((0, 3)))
