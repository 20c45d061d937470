"""Mini-batch training of the stage classifiers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import substream
from .dataset import BASES
from .models import FrameClassifier, SequenceClassifier, scale_input

log = logging.getLogger(__name__)

MERGED = "Layup+OtherTwoPoint"

# stage -> (segment, input kind, label space)
STAGES = {
    "occ5": ("occ", "sequence", ("ThreePoint", "FreeThrow", MERGED, "SlamDunk", "Steal")),
    "pre2": ("pre", "sequence", ("Layup", "OtherTwoPoint")),
    "postsf": ("post", "frame", ("Success", "Failure")),
    # flat occ-only six-class classifier used by the ontology ablation
    "occ6": ("occ", "sequence", BASES),
}


def stage_label(stage, label):
    """Class index of an :class:`EventLabel` in ``stage``'s label space, or None."""
    space = STAGES[stage][2]
    if stage == "occ5":
        key = MERGED if label.base in ("Layup", "OtherTwoPoint") else label.base
    elif stage == "postsf":
        if label.base == "Steal":
            return None
        key = label.outcome
    else:
        key = label.base
    return space.index(key) if key in space else None


@dataclass(frozen=True)
class Hyper:
    batch_size: int = 128
    lr: float = 0.001
    lr_decay: float = 0.95
    lr_step: int = 5000
    momentum: float = 0.9
    optimizer: str = "adam"
    epochs: int = 6
    # small stages get extra epochs until they reach this many updates
    min_iterations: int = 40
    in_size: int = 32
    channels: tuple = (8, 16, 32)
    feature_dim: int = 128
    hidden_dim: int = 256
    window: int = 16

    def schedule(self):
        return T.StepDecay(self.lr, self.lr_decay, self.lr_step)


@dataclass
class TrainResult:
    model: object
    # one row per iteration: (iteration, epoch, lr, loss)
    curve: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)


def make_optimizer(params, hyper):
    if hyper.optimizer == "sgd":
        return T.SGD(params, hyper.schedule(), hyper.momentum)
    if hyper.optimizer == "adam":
        return T.Adam(params, hyper.schedule())
    raise ValueError(f"unknown optimizer {hyper.optimizer!r}")


def build_model(kind, n_classes, hyper, seed):
    rng = substream(seed, "init")
    if kind == "sequence":
        return SequenceClassifier(
            rng, n_classes, hyper.in_size, hyper.channels, hyper.feature_dim, hyper.hidden_dim
        )
    return FrameClassifier(rng, hyper.in_size, hyper.channels, hyper.feature_dim, n_classes)


def balanced_order(labels, rng):
    """One epoch of sample indices with every class resampled to the largest count."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    top = max(int(np.sum(labels == c)) for c in classes)
    picks = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        extra = rng.choice(idx, top - idx.size, replace=True) if top > idx.size else idx[:0]
        picks.append(np.concatenate([idx, extra]))
    order = np.concatenate(picks)
    return order[rng.permutation(order.size)]


def dataset_loss(model, x, y, batch_size=256):
    """Mean training loss over a whole sample array, no parameter update."""
    total = 0.0
    count = 0
    for s in range(0, len(x), batch_size):
        xb = scale_input(x[s : s + batch_size])
        yb = y[s : s + batch_size]
        scores, _ = model.forward(xb)
        reps = scores.shape[1] if scores.ndim == 3 else 1
        loss, _ = T.cross_entropy(scores, np.repeat(yb, reps))
        total += loss * len(yb)
        count += len(yb)
    return total / count


def train(x, y, n_classes, kind, hyper=Hyper(), seed=0, track_epoch_loss=False, model=None):
    """Fit a classifier on uint8 samples ``x`` with integer labels ``y``.

    ``x`` is (N, T, 3, S, S) for sequence models and (N, 3, S, S) for frame
    models. Every class in ``range(n_classes)`` must be present.
    """
    y = np.asarray(y, dtype=np.int64)
    present = set(np.unique(y).tolist())
    missing = [c for c in range(n_classes) if c not in present]
    if missing:
        raise ValueError(f"no training samples for classes {missing}")
    if model is None:
        model = build_model(kind, n_classes, hyper, seed)
    params = model.params()
    opt = make_optimizer(params, hyper)
    rng = substream(seed, "sampling")
    result = TrainResult(model)
    if track_epoch_loss:
        result.epoch_loss.append(dataset_loss(model, x, y))
    counts = np.bincount(y, minlength=n_classes)
    per_epoch = -(-int(counts.max()) * int(np.count_nonzero(counts)) // hyper.batch_size)
    epochs = max(hyper.epochs, -(-hyper.min_iterations // per_epoch))
    for epoch in range(epochs):
        order = balanced_order(y, rng)
        for s in range(0, order.size, hyper.batch_size):
            idx = np.sort(order[s : s + hyper.batch_size])
            loss, grads = model.loss_and_grads(scale_input(x[idx]), y[idx])
            result.curve.append((opt.iteration, epoch, opt.lr, loss))
            opt.step(grads)
        if track_epoch_loss:
            result.epoch_loss.append(dataset_loss(model, x, y))
        log.info("epoch %d: last batch loss %.4f", epoch, result.curve[-1][3])
    return result


def write_curve(path, curve):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,epoch,lr,loss\n")
        for it, ep, lr, loss in curve:
            fh.write(f"{it},{ep},{lr:.9g},{loss:.9g}\n")
