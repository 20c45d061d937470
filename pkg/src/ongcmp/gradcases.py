"""Finite-difference gradient checks for every differentiable op.

Each case builds random float64 inputs for one seed and returns the max
relative error reported by :func:`ongcmp.tensor.grad_check`. Losses are
``sum(R * op(x))`` with a fixed random projection ``R`` unless the op ends
in a scalar loss itself.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import substream
from .models import FrameClassifier, SequenceClassifier, cast

F64 = np.float64


def _shape(rng, lo=1, hi=8, n=1):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=n))


def _projected(forward, backward, params, rng):
    """Loss ``sum(R * forward())`` with gradients from ``backward(R)``."""
    out, _ = forward()
    r = rng.standard_normal(out.shape)

    def fn():
        y, cache = forward()
        return float(np.sum(r * y)), backward(r, cache)

    return T.grad_check(fn, params)


def case_linear(seed):
    rng = substream(seed, "gradcheck", 0)
    n, d, k = _shape(rng, n=3)
    p = {"x": rng.standard_normal((n, d)), "w": rng.standard_normal((d, k)), "b": rng.standard_normal(k)}

    def fwd():
        return T.linear(p["x"], p["w"], p["b"])

    def bwd(r, x):
        dx, dw, db = T.linear_backward(r, x, p["w"])
        return {"x": dx, "w": dw, "b": db}

    return _projected(fwd, bwd, p, rng)


def case_conv2d(seed):
    rng = substream(seed, "gradcheck", 1)
    b, c, k = _shape(rng, 1, 3, 3)
    kh, kw = _shape(rng, 1, 3, 2)
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    # choose H, W so the output extent is integral and everything stays <= 8
    h = stride * int(rng.integers(1, 3)) + kh - 2 * pad
    w = stride * int(rng.integers(1, 3)) + kw - 2 * pad
    h, w = max(h, kh), max(w, kw)
    h += (h + 2 * pad - kh) % stride
    w += (w + 2 * pad - kw) % stride
    p = {
        "x": rng.standard_normal((b, c, h, w)),
        "w": rng.standard_normal((k, c, kh, kw)),
        "b": rng.standard_normal(k),
    }

    def fwd():
        return T.conv2d(p["x"], p["w"], p["b"], stride, pad)

    def bwd(r, cache):
        dx, dw, db = T.conv2d_backward(r, cache)
        return {"x": dx, "w": dw, "b": db}

    return _projected(fwd, bwd, p, rng)


def case_relu(seed):
    rng = substream(seed, "gradcheck", 2)
    x = rng.standard_normal(_shape(rng, n=2))
    # keep entries away from the kink so central differences are exact
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    p = {"x": x}
    return _projected(lambda: T.relu(p["x"]), lambda r, m: {"x": T.relu_backward(r, m)}, p, rng)


def case_maxpool(seed):
    rng = substream(seed, "gradcheck", 3)
    b, c = _shape(rng, 1, 3, 2)
    h, w = (2 * v for v in _shape(rng, 1, 4, 2))
    p = {"x": rng.standard_normal((b, c, h, w))}
    return _projected(lambda: T.maxpool2(p["x"]), lambda r, cc: {"x": T.maxpool2_backward(r, cc)}, p, rng)


def case_softmax_ce(seed):
    rng = substream(seed, "gradcheck", 4)
    n, k = _shape(rng, 1, 8, 1)[0], int(rng.integers(2, 9))
    p = {"s": rng.standard_normal((n, k)) * 2}
    y = rng.integers(0, k, size=n)

    def fn():
        loss, ds = T.cross_entropy(p["s"], y)
        return loss, {"s": ds}

    return T.grad_check(fn, p)


def case_conv_chain(seed):
    """conv2d -> flatten -> softmax cross-entropy."""
    rng = substream(seed, "gradcheck", 5)
    b = int(rng.integers(1, 4))
    c = int(rng.integers(1, 4))
    # the softmax runs over all outputs, so with one kernel the bias gradient
    # is exactly zero and the relative error is pure round-off
    k = int(rng.integers(2, 4))
    h, w = _shape(rng, 3, 6, 2)
    p = {"x": rng.standard_normal((b, c, h, w)), "w": rng.standard_normal((k, c, 3, 3)), "b": rng.standard_normal(k)}
    y = rng.integers(0, k * h * w, size=b)

    def fn():
        out, cache = T.conv2d(p["x"], p["w"], p["b"], 1, 1)
        loss, ds = T.cross_entropy(out.reshape(b, -1), y)
        dx, dw, db = T.conv2d_backward(ds.reshape(out.shape), cache)
        return loss, {"x": dx, "w": dw, "b": db}

    return T.grad_check(fn, p)


def case_lstm(seed, steps=3):
    rng = substream(seed, "gradcheck", 6)
    bsz, d, hd = _shape(rng, 1, 4, 3)
    lp = T.LstmParams.init(rng, d, hd, F64)
    p = {"x": rng.standard_normal((bsz, steps, d)), **{k: v.data for k, v in lp.params().items()}}
    r = rng.standard_normal((bsz, steps, hd))

    def fn():
        hs, caches = T.lstm_forward(p["x"], lp)
        dxs, g = T.lstm_backward(r, caches, lp)
        return float(np.sum(r * hs)), {"x": dxs, **g}

    return T.grad_check(fn, p)


def _model_case(model, x, y, rng):
    cast(model, F64)
    params = {k: t.data for k, t in model.params().items()}
    # zero biases put ReLU inputs of dead channels exactly on the kink, where
    # the loss is not differentiable; check at a generic point instead
    for k, v in params.items():
        if k.endswith(".b"):
            v[...] = rng.uniform(-0.5, 0.5, v.shape)

    def fn():
        return model.loss_and_grads(x, y)

    return T.grad_check(fn, params)


def case_sequence_model(seed):
    rng = substream(seed, "gradcheck", 7)
    model = SequenceClassifier(rng, 3, in_size=8, channels=(2, 2, 2), feature_dim=4, hidden_dim=3)
    x = rng.standard_normal((2, 3, 3, 8, 8))
    return _model_case(model, x, rng.integers(0, 3, size=2), rng)


def case_frame_model(seed):
    rng = substream(seed, "gradcheck", 8)
    model = FrameClassifier(rng, in_size=8, channels=(2, 2, 2), feature_dim=4)
    x = rng.standard_normal((3, 3, 8, 8))
    return _model_case(model, x, rng.integers(0, 2, size=3), rng)


CASES = {
    "linear": case_linear,
    "conv2d": case_conv2d,
    "relu": case_relu,
    "maxpool2": case_maxpool,
    "softmax_cross_entropy": case_softmax_ce,
    "conv2d_softmax_chain": case_conv_chain,
    "lstm_3_steps": case_lstm,
    "sequence_classifier": case_sequence_model,
    "frame_classifier": case_frame_model,
}


def run_all(seeds=range(10)):
    """Max relative error per case over ``seeds``."""
    return {name: max(fn(s) for s in seeds) for name, fn in CASES.items()}
