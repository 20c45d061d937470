"""Sequence and frame classifiers built from :mod:`ongcmp.tensor` ops.

``SequenceClassifier``: per-image CNN features -> single-layer LSTM from a
zero state -> per-frame linear scores -> softmax -> temporal mean.
``FrameClassifier``: CNN features -> linear scores -> softmax, one image at a
time; clip decisions come from :func:`vote_sf`.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .imageio import resize_bilinear
from .tensor import DTYPE, LinearHead, LstmParams, Tensor


def preprocess(images, size):
    """uint8 HxWx3 images -> float32 (N, 3, size, size) centred on zero."""
    out = np.empty((len(images), 3, size, size), dtype=DTYPE)
    for i, img in enumerate(images):
        img = np.asarray(img)
        if img.shape[:2] != (size, size):
            img = resize_bilinear(img, size, size)
        out[i] = np.transpose(img, (2, 0, 1)) / 255.0 - 0.5
    return out


def to_model_input(images, size):
    """Resize to the backbone size but keep uint8 (compact cache format)."""
    out = np.empty((len(images), 3, size, size), dtype=np.uint8)
    for i, img in enumerate(images):
        img = np.asarray(img)
        if img.shape[:2] != (size, size):
            img = np.clip(np.rint(resize_bilinear(img, size, size)), 0, 255)
        out[i] = np.transpose(img, (2, 0, 1))
    return out


def scale_input(u8):
    return u8.astype(DTYPE) / 255.0 - 0.5


class CnnBackbone:
    """Three conv(3x3, pad 1) -> ReLU -> 2x2 max-pool blocks and one FC layer."""

    def __init__(self, rng, in_size=32, channels=(8, 16, 32), feature_dim=128, dtype=DTYPE):
        if in_size % 8:
            raise ValueError("backbone input size must be a multiple of 8")
        self.in_size = in_size
        self.channels = tuple(channels)
        self.feature_dim = feature_dim
        self.convs = []
        c_in = 3
        for c_out in self.channels:
            fan = c_in * 9
            self.convs.append(
                (
                    Tensor(T.he_init(rng, (c_out, c_in, 3, 3), fan, dtype)),
                    Tensor(np.zeros(c_out, dtype)),
                )
            )
            c_in = c_out
        flat = c_in * (in_size // 8) ** 2
        self.fc_w = Tensor(T.he_init(rng, (flat, feature_dim), flat, dtype))
        self.fc_b = Tensor(np.zeros(feature_dim, dtype))

    def params(self):
        out = OrderedDict()
        for k, (w, b) in enumerate(self.convs, 1):
            out[f"conv{k}.w"] = w
            out[f"conv{k}.b"] = b
        out["fc.w"] = self.fc_w
        out["fc.b"] = self.fc_b
        return out

    def forward(self, x):
        if x.ndim != 4 or x.shape[1:] != (3, self.in_size, self.in_size):
            raise ValueError(
                f"backbone expects (N, 3, {self.in_size}, {self.in_size}) input, got {x.shape}"
            )
        caches = []
        # channel-major layout inside the conv stack
        h = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        for w, b in self.convs:
            h, cc = T.conv2d_cbhw(h, w.data, b.data, stride=1, pad=1)
            h, rc = T.relu(h)
            h, pc = T.maxpool2(h)
            caches.append((cc, rc, pc))
        flat = np.ascontiguousarray(h.transpose(1, 0, 2, 3)).reshape(h.shape[1], -1)
        z, _ = T.linear(flat, self.fc_w.data, self.fc_b.data)
        feat, fmask = T.relu(z)
        return feat, (caches, h.shape, flat, fmask)

    def backward(self, dfeat, cache):
        caches, pshape, flat, fmask = cache
        grads = OrderedDict()
        dz = T.relu_backward(dfeat, fmask)
        dflat, grads["fc.w"], grads["fc.b"] = T.linear_backward(dz, flat, self.fc_w.data)
        c, n, ph, pw = pshape
        dh = np.ascontiguousarray(dflat.reshape(n, c, ph, pw).transpose(1, 0, 2, 3))
        for k in range(len(self.convs), 0, -1):
            cc, rc, pc = caches[k - 1]
            dh = T.maxpool2_backward(dh, pc)
            dh = T.relu_backward(dh, rc)
            dh, grads[f"conv{k}.w"], grads[f"conv{k}.b"] = T.conv2d_cbhw_backward(dh, cc)
        return OrderedDict((k, grads[k]) for k in self.params())


@dataclass
class SequencePrediction:
    """Per-frame probabilities ``p`` (T x N) and their temporal mean ``g``."""

    p: np.ndarray
    g: np.ndarray

    @property
    def label(self):
        return T.argmax(self.g)


def _prefixed(prefix, params):
    return OrderedDict((f"{prefix}.{k}", v) for k, v in params.items())


class SequenceClassifier:
    def __init__(self, rng, n_classes, in_size=32, channels=(8, 16, 32), feature_dim=128,
                 hidden_dim=256, dtype=DTYPE):
        self.backbone = CnnBackbone(rng, in_size, channels, feature_dim, dtype)
        self.lstm = LstmParams.init(rng, feature_dim, hidden_dim, dtype)
        self.head = LinearHead.init(rng, hidden_dim, n_classes, dtype)

    @property
    def n_classes(self):
        return self.head.n_classes

    @property
    def in_size(self):
        return self.backbone.in_size

    def params(self):
        out = _prefixed("backbone", self.backbone.params())
        out.update(_prefixed("lstm", self.lstm.params()))
        out.update(_prefixed("head", self.head.params()))
        return out

    def forward(self, x):
        """Scores for ``x`` of shape (B, T, 3, S, S): returns (B, T, N)."""
        b, t = x.shape[:2]
        feat, bcache = self.backbone.forward(x.reshape((b * t,) + x.shape[2:]))
        hs, lcaches = T.lstm_forward(feat.reshape(b, t, -1), self.lstm)
        scores, _ = T.linear(hs, self.head.w.data, self.head.b.data)
        T.check_finite(scores, "scores")
        return scores, (bcache, hs, lcaches, b, t)

    def loss_and_grads(self, x, labels):
        """Mean per-frame cross-entropy of a batch with one label per sequence."""
        scores, (bcache, hs, lcaches, b, t) = self.forward(x)
        y = np.repeat(np.asarray(labels), t)
        loss, ds = T.cross_entropy(scores, y)
        grads = OrderedDict()
        dh, gw, gb = T.linear_backward(ds, hs, self.head.w.data)
        dfeat, lgrads = T.lstm_backward(dh, lcaches, self.lstm)
        bgrads = self.backbone.backward(dfeat.reshape(b * t, -1), bcache)
        grads.update(_prefixed("backbone", bgrads))
        grads.update(_prefixed("lstm", lgrads))
        grads["head.w"] = gw
        grads["head.b"] = gb
        return loss, grads

    def features(self, x):
        """Per-image backbone features, (B, T, feature_dim)."""
        b, t = x.shape[:2]
        feat, _ = self.backbone.forward(x.reshape((b * t,) + x.shape[2:]))
        return feat.reshape(b, t, -1)

    def predict_proba(self, x):
        scores, _ = self.forward(x)
        return T.softmax(scores.astype(np.float64))


class FrameClassifier:
    def __init__(self, rng, in_size=32, channels=(8, 16, 32), feature_dim=128, n_classes=2, dtype=DTYPE):
        self.backbone = CnnBackbone(rng, in_size, channels, feature_dim, dtype)
        self.head = LinearHead.init(rng, feature_dim, n_classes, dtype)

    @property
    def n_classes(self):
        return self.head.n_classes

    @property
    def in_size(self):
        return self.backbone.in_size

    def params(self):
        out = _prefixed("backbone", self.backbone.params())
        out.update(_prefixed("head", self.head.params()))
        return out

    def forward(self, x):
        feat, bcache = self.backbone.forward(x)
        scores, _ = T.linear(feat, self.head.w.data, self.head.b.data)
        return scores, (bcache, feat)

    def loss_and_grads(self, x, labels):
        scores, (bcache, feat) = self.forward(x)
        loss, ds = T.cross_entropy(scores, labels)
        dfeat, gw, gb = T.linear_backward(ds, feat, self.head.w.data)
        grads = _prefixed("backbone", self.backbone.backward(dfeat, bcache))
        grads["head.w"] = gw
        grads["head.b"] = gb
        return loss, grads

    def features(self, x):
        feat, _ = self.backbone.forward(x)
        return feat

    def predict_proba(self, x):
        scores, _ = self.forward(x)
        return T.softmax(scores.astype(np.float64))


def set_params(model, arrays):
    """Load arrays (name -> ndarray) into ``model`` in place."""
    params = model.params()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ValueError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for k, p in params.items():
        a = np.asarray(arrays[k])
        if a.shape != p.shape:
            raise ValueError(f"{k}: shape {a.shape} != {p.shape}")
        p.data[...] = a


def cast(model, dtype):
    """Cast every parameter of ``model`` in place (float64 for gradient checks)."""
    for p in model.params().values():
        p.data = p.data.astype(dtype)
    return model


# ---------------------------------------------------------------------------
# inference entry points
# ---------------------------------------------------------------------------


def classify_sequence(gcmp_seq, model, window=None):
    """Average per-frame class probabilities of a GCMP image sequence.

    ``gcmp_seq`` is a list of HxWx3 uint8 images or an already prepared
    (T, 3, S, S) uint8 array. With ``window`` set, the sequence is cut into
    windows (see :func:`ongcmp.dataset.windows16`), each window is unrolled
    from a zero state, and ``g`` is the mean of the window means.
    """
    from .dataset import windows16

    x = _as_model_input(gcmp_seq, model.in_size)
    if len(x) == 0:
        raise ValueError("empty sequence")
    if window is None or len(x) < window:
        p = model.predict_proba(scale_input(x)[None])[0]
        return SequencePrediction(p, p.mean(axis=0))
    wins = windows16(len(x), window)
    xs = np.stack([x[list(w)] for w in wins])
    p = model.predict_proba(scale_input(xs))
    g = p.mean(axis=1).mean(axis=0)
    return SequencePrediction(p.reshape(-1, p.shape[-1]), g)


def _as_model_input(images, size):
    if isinstance(images, np.ndarray) and images.ndim == 4 and images.shape[1] == 3 and images.dtype == np.uint8:
        if images.shape[2:] != (size, size):
            raise ValueError(f"prepared input must be {size}x{size}")
        return images
    return to_model_input(list(images), size)


def classify_frame_sf(frame, model):
    """Success/failure probabilities for one raw HxWx3 frame."""
    if np.asarray(frame).ndim != 3:
        raise ValueError("expected a single HxWx3 frame")
    return classify_frames_sf([frame], model)[0]


def classify_frames_sf(frames, model):
    """Per-frame success/failure probabilities, shape (T, 2)."""
    x = _as_model_input(frames, model.in_size)
    return model.predict_proba(scale_input(x))


SUCCESS, FAILURE = 0, 1


def vote_sf(per_frame):
    """Majority vote over per-frame (success, failure) probability pairs.

    An exact tie goes to Success when the mean success probability is at
    least 0.5. Returns ``(outcome, n_success, n_failure)`` where ``outcome``
    is ``"Success"`` or ``"Failure"``.
    """
    p = np.asarray(per_frame, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] != 2:
        raise ValueError("need a non-empty list of probability pairs")
    votes = np.argmax(p, axis=1)
    n_fail = int(np.sum(votes == FAILURE))
    n_succ = len(votes) - n_fail
    if n_succ != n_fail:
        outcome = "Success" if n_succ > n_fail else "Failure"
    else:
        outcome = "Success" if p[:, SUCCESS].mean() >= 0.5 else "Failure"
    return outcome, n_succ, n_fail
