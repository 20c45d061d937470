"""Dense tensors, forward/backward ops and SGD.

Only the handful of operations the classifiers need are provided, each as a
``forward`` returning ``(output, cache)`` and a matching ``*_backward``. All
ops are dtype-generic: parameters live in float32 for training and are cast
to float64 for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def check_finite(a, what="value"):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite {what}")
    return a


@dataclass
class Tensor:
    """n-dimensional array with an optional same-shape gradient buffer."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 0 or 0 in self.data.shape:
            raise ValueError(f"tensor extents must be positive, got {self.data.shape}")
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ValueError("gradient shape does not match data shape")

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype))


def uniform_init(rng, shape, fan_in, dtype=DTYPE):
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    r = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-r, r, size=shape).astype(dtype)


def he_init(rng, shape, fan_in, dtype=DTYPE):
    """Normal with std sqrt(2 / fan_in), for weights feeding a ReLU."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _out_extent(n, k, stride, pad):
    span = n + 2 * pad - k
    if span < 0:
        raise ValueError(f"kernel extent {k} exceeds padded input {n + 2 * pad}")
    if span % stride:
        raise ValueError(f"output extent ({n}+2*{pad}-{k})/{stride}+1 is not integral")
    return span // stride + 1


def conv2d_cbhw(x, w, b=None, stride=1, pad=0):
    """Cross-correlation on channel-major input ``x`` [C,B,H,W] -> [K,B,H',W']."""
    if stride < 1 or pad < 0:
        raise ValueError("stride must be positive and pad non-negative")
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-D input and K,C,kh,kw kernels")
    c, bsz, h, wd = x.shape
    k, kc, kh, kw = w.shape
    if kc != c:
        raise ValueError(f"kernel channels {kc} != input channels {c}")
    oh = _out_extent(h, kh, stride, pad)
    ow = _out_extent(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    xp = np.ascontiguousarray(xp)
    cols = kernels.im2col(xp, kh, kw, stride, oh, ow)
    out = w.reshape(k, -1) @ cols
    if b is not None:
        out += b[:, None]
    cache = (xp.shape, cols, w, stride, pad, oh, ow, b is not None)
    return out.reshape(k, bsz, oh, ow), cache


def conv2d_cbhw_backward(dout, cache):
    xshape, cols, w, stride, pad, oh, ow, has_b = cache
    k, c, kh, kw = w.shape
    d2 = dout.reshape(k, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1) if has_b else None
    dcols = np.ascontiguousarray(w.reshape(k, -1).T @ d2)
    dxp = kernels.col2im(dcols, xshape, kh, kw, stride, oh, ow)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp), dw, db


def conv2d(x, w, b=None, stride=1, pad=0):
    """Cross-correlate ``x`` [C,H,W] or [B,C,H,W] with kernels ``w`` [K,C,kh,kw]."""
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ValueError("conv2d expects [B,]C,H,W input")
    out, cache = conv2d_cbhw(np.ascontiguousarray(x.transpose(1, 0, 2, 3)), w, b, stride, pad)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    return (out[0] if single else out), (cache, single)


def conv2d_backward(dout, cache):
    inner, single = cache
    if single:
        dout = dout[None]
    dx, dw, db = conv2d_cbhw_backward(np.ascontiguousarray(dout.transpose(1, 0, 2, 3)), inner)
    dx = np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
    return (dx[0] if single else dx), dw, db


def relu(x):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2(x):
    """2x2 max pooling with stride 2 over the last two axes of a 4-D array."""
    out, arg = kernels.maxpool2(np.ascontiguousarray(x))
    return out, (arg, x.shape[2], x.shape[3])


def maxpool2_backward(dout, cache):
    arg, h, w = cache
    return kernels.maxpool2_backward(np.ascontiguousarray(dout), arg, h, w)


# ---------------------------------------------------------------------------
# affine maps
# ---------------------------------------------------------------------------


def linear(x, w, b):
    """``x @ w + b`` over the last axis; ``w`` is (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ValueError("bias length must equal weight columns")
    return x @ w + b, x


def linear_backward(dout, x, w):
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ w.T, x2.T @ d2, d2.sum(axis=0)


@dataclass
class LinearHead:
    """Classification layer: ``s_n = sum_i h_i * w[i, n] + b[n]``."""

    w: Tensor
    b: Tensor

    def __post_init__(self):
        if self.w.data.ndim != 2 or self.w.shape[1] < 2:
            raise ValueError("LinearHead needs a (hidden, N) weight with N >= 2")
        if self.b.shape != (self.w.shape[1],):
            raise ValueError("bias length must equal class count")

    @property
    def n_classes(self):
        return self.w.shape[1]

    @classmethod
    def init(cls, rng, hidden_dim, n_classes, dtype=DTYPE):
        return cls(
            Tensor(uniform_init(rng, (hidden_dim, n_classes), hidden_dim, dtype)),
            Tensor(uniform_init(rng, (n_classes,), hidden_dim, dtype)),
        )

    def params(self):
        return {"w": self.w, "b": self.b}


def classify_scores(h, head):
    """Per-class response values of hidden state(s) ``h``."""
    s, _ = linear(h, head.w.data, head.b.data)
    return check_finite(s, "scores")


# ---------------------------------------------------------------------------
# softmax and cross-entropy
# ---------------------------------------------------------------------------


def softmax(s, axis=-1):
    s = np.asarray(s)
    check_finite(s, "scores")
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(s, axis=-1):
    z = s - s.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(scores, labels):
    """Mean cross-entropy of integer ``labels`` under ``scores`` [..., N].

    Returns the loss and its gradient with respect to ``scores``.
    """
    n = scores.shape[-1]
    s2 = scores.reshape(-1, n)
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != s2.shape[0]:
        raise ValueError("one label per score row is required")
    logp = log_softmax(s2)
    rows = np.arange(y.shape[0])
    loss = -logp[rows, y].mean()
    d = np.exp(logp)
    d[rows, y] -= 1.0
    d /= y.shape[0]
    return float(check_finite(loss, "loss")), d.reshape(scores.shape).astype(scores.dtype)


def argmax(v):
    """Index of the largest entry; the lowest index wins ties."""
    return int(np.argmax(np.asarray(v)))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def _sigmoid(x):
    # split form avoids overflow warnings for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmParams:
    """Single LSTM cell.

    Gate pre-activations are ``x @ wx + h @ wh + b`` split into four blocks of
    ``hidden_dim`` columns in the order input, forget, output, candidate.
    """

    wx: Tensor
    wh: Tensor
    b: Tensor
    input_dim: int = field(init=False)
    hidden_dim: int = field(init=False)

    def __post_init__(self):
        d, h4 = self.wx.shape
        if h4 % 4 or h4 == 0:
            raise ValueError("gate width must be 4 * hidden_dim")
        h = h4 // 4
        if self.wh.shape != (h, h4) or self.b.shape != (h4,):
            raise ValueError("all four gates must share dimensions")
        self.input_dim = d
        self.hidden_dim = h

    @classmethod
    def init(cls, rng, input_dim, hidden_dim=256, dtype=DTYPE):
        if hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        fan_in = input_dim + hidden_dim
        return cls(
            Tensor(uniform_init(rng, (input_dim, 4 * hidden_dim), fan_in, dtype)),
            Tensor(uniform_init(rng, (hidden_dim, 4 * hidden_dim), fan_in, dtype)),
            Tensor(uniform_init(rng, (4 * hidden_dim,), fan_in, dtype)),
        )

    def params(self):
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


def lstm_step(x_t, h_prev, c_prev, p):
    """One LSTM step on [..., input_dim] inputs. Returns ``h_t, c_t, cache``."""
    if x_t.shape[-1] != p.input_dim:
        raise ValueError(f"input dim {x_t.shape[-1]} != {p.input_dim}")
    if h_prev.shape[-1] != p.hidden_dim or c_prev.shape[-1] != p.hidden_dim:
        raise ValueError(f"state dim must be {p.hidden_dim}")
    hd = p.hidden_dim
    a = x_t @ p.wx.data + h_prev @ p.wh.data + p.b.data
    i = _sigmoid(a[..., :hd])
    f = _sigmoid(a[..., hd : 2 * hd])
    o = _sigmoid(a[..., 2 * hd : 3 * hd])
    g = np.tanh(a[..., 3 * hd :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    check_finite(h, "hidden state")
    return h, c, (x_t, h_prev, c_prev, i, f, o, g, tc)


def lstm_step_backward(dh, dc, cache, p, grads):
    """Backprop one step; accumulates into ``grads`` (keys wx, wh, b).

    Returns ``dx, dh_prev, dc_prev``.
    """
    x_t, h_prev, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    da = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)],
        axis=-1,
    )
    x2 = x_t.reshape(-1, x_t.shape[-1])
    h2 = h_prev.reshape(-1, h_prev.shape[-1])
    a2 = da.reshape(-1, da.shape[-1])
    grads["wx"] += x2.T @ a2
    grads["wh"] += h2.T @ a2
    grads["b"] += a2.sum(axis=0)
    return da @ p.wx.data.T, da @ p.wh.data.T, dc_prev


def lstm_forward(xs, p):
    """Unroll over axis -2 of ``xs`` [..., T, D] starting from zero state."""
    lead = xs.shape[:-2]
    t_len = xs.shape[-2]
    h = np.zeros(lead + (p.hidden_dim,), dtype=xs.dtype)
    c = np.zeros_like(h)
    hs = np.empty(lead + (t_len, p.hidden_dim), dtype=xs.dtype)
    caches = []
    for t in range(t_len):
        h, c, cache = lstm_step(xs[..., t, :], h, c, p)
        hs[..., t, :] = h
        caches.append(cache)
    return hs, caches


def lstm_backward(dhs, caches, p):
    grads = {k: np.zeros_like(v.data) for k, v in p.params().items()}
    t_len = dhs.shape[-2]
    dxs = np.empty(dhs.shape[:-1] + (p.input_dim,), dtype=dhs.dtype)
    dh_next = np.zeros_like(dhs[..., 0, :])
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(t_len)):
        dx, dh_next, dc_next = lstm_step_backward(
            dhs[..., t, :] + dh_next, dc_next, caches[t], p, grads
        )
        dxs[..., t, :] = dx
    return dxs, grads


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(loss_and_grads, params, eps=1e-6):
    """Compare analytic gradients with central finite differences.

    ``loss_and_grads()`` evaluates the scalar loss at the current contents of
    ``params`` (a dict of float64 arrays, perturbed in place) and returns
    ``(loss, grads)`` with ``grads`` keyed like ``params``. The error for one
    parameter is ``|a - f| / max(|a|, |f|, 1e-8)`` using Euclidean norms over
    that parameter's entries; the maximum over parameters is returned.
    """
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters ({name} is {arr.dtype})")
    _, analytic = loss_and_grads()
    worst = 0.0
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + eps
            lp, _ = loss_and_grads()
            flat[idx] = old - eps
            lm, _ = loss_and_grads()
            flat[idx] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteError(f"non-finite loss while perturbing {name}")
            nflat[idx] = (lp - lm) / (2 * eps)
        a = np.asarray(analytic[name], dtype=np.float64)
        diff = np.linalg.norm(a - num)
        scale = max(np.linalg.norm(a), np.linalg.norm(num), 1e-8)
        worst = max(worst, diff / scale)
    return worst


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepDecay:
    """Learning rate multiplied by ``factor`` every ``every`` iterations."""

    base: float = 0.001
    factor: float = 0.95
    every: int = 5000

    def __call__(self, iteration):
        return self.base * self.factor ** (iteration // self.every)


def sgd_step(params, grads, lr, schedule=None, iteration=0):
    """Return ``p - lr * g`` for each parameter.

    With a ``schedule`` the rate used is ``schedule(iteration)`` and ``lr`` is
    ignored.
    """
    rate = schedule(iteration) if schedule is not None else lr
    if not rate > 0:
        raise ValueError("learning rate must be positive")
    out = {}
    for k, p in params.items():
        g = check_finite(np.asarray(grads[k]), f"gradient for {k}")
        out[k] = (p - rate * g).astype(p.dtype)
    return out


class SGD:
    """SGD with optional momentum over a dict of :class:`Tensor` parameters."""

    def __init__(self, params, schedule, momentum=0.0):
        self.params = params
        self.schedule = schedule
        self.momentum = momentum
        self.iteration = 0
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    @property
    def lr(self):
        return self.schedule(self.iteration)

    def step(self, grads):
        rate = self.lr
        for k, p in self.params.items():
            g = check_finite(grads[k], f"gradient for {k}")
            if self.momentum:
                v = self.velocity[k]
                v *= self.momentum
                v += g
                g = v
            p.data -= (rate * g).astype(p.data.dtype)
        self.iteration += 1


class Adam:
    """Adam over a dict of :class:`Tensor` parameters; the schedule sets the step size."""

    def __init__(self, params, schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.iteration = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    @property
    def lr(self):
        return self.schedule(self.iteration)

    def step(self, grads):
        rate = self.lr
        t = self.iteration + 1
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        for k, p in self.params.items():
            g = check_finite(grads[k], f"gradient for {k}")
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            step = rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= step.astype(p.data.dtype)
        self.iteration += 1
