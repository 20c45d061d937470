"""Accuracy, mAP, feature-correlation and timing reports."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .imageio import write_pgm


@dataclass
class ConfusionMatrix:
    """Counts with rows = ground truth and columns = prediction."""

    labels: tuple
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def per_class(self):
        """Diagonal / row sum; NaN for classes absent from the ground truth."""
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    def average(self):
        """Unweighted mean of the per-class accuracies that are defined."""
        return float(np.nanmean(self.per_class()))

    def overall(self):
        return float(np.trace(self.counts) / max(self.total, 1))


def confusion_matrix(truth, pred, n_classes):
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(truth, pred):
        if not (0 <= t < n_classes and 0 <= p < n_classes):
            raise ValueError(f"label outside 0..{n_classes - 1}: truth {t}, prediction {p}")
        counts[t, p] += 1
    return counts


def accuracy_report(pairs, labels):
    """``pairs`` is a list of (predicted index, true index); ``labels`` names the classes."""
    if not pairs:
        raise ValueError("no predictions to evaluate")
    pred, truth = zip(*pairs)
    return ConfusionMatrix(tuple(labels), confusion_matrix(truth, pred, len(labels)))


@dataclass
class ApReport:
    per_class: np.ndarray  # NaN where a class has no positives
    excluded: tuple  # class indices without positives

    @property
    def mean(self):
        return float(np.nanmean(self.per_class)) if np.any(~np.isnan(self.per_class)) else float("nan")


def average_precision(scores, positive, ids):
    """Precision averaged at the ranks of positives (no interpolation).

    Rank is descending score, ties broken by ascending id.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("confidences must be finite")
    positive = np.asarray(positive, dtype=bool)
    if not positive.any():
        return float("nan")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    hits = positive[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(confidences, truth, ids=None):
    """Per-class AP over (n_clips, K) confidences and true class indices."""
    conf = np.asarray(confidences, dtype=np.float64)
    truth = np.asarray(truth)
    if ids is None:
        ids = list(range(len(truth)))
    ap = np.array([average_precision(conf[:, c], truth == c, ids) for c in range(conf.shape[1])])
    return ApReport(ap, tuple(int(c) for c in np.flatnonzero(np.isnan(ap))))


def cosine_matrix(feats):
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm feature vector")
    unit = feats / norms[:, None]
    return unit @ unit.T


def correlate_features(features, labels, classes=None):
    """Mean pairwise cosine similarity x100 between and within classes.

    Within a class the self-pairs are excluded. Returns ``(classes, matrix)``.
    """
    labels = np.asarray(labels)
    if classes is None:
        classes = sorted(set(labels.tolist()))
    sim = cosine_matrix(features)
    k = len(classes)
    out = np.zeros((k, k))
    for a, ca in enumerate(classes):
        ia = np.flatnonzero(labels == ca)
        if ia.size < 2:
            raise ValueError(f"class {ca!r} needs at least two samples")
        for b, cb in enumerate(classes):
            ib = np.flatnonzero(labels == cb)
            block = sim[np.ix_(ia, ib)]
            if a == b:
                out[a, b] = (block.sum() - np.trace(block)) / (ia.size * (ia.size - 1))
            else:
                out[a, b] = block.mean()
    out = 0.5 * (out + out.T)
    return tuple(classes), 100.0 * out


def intra_inter(matrix):
    """Per class: intra similarity, mean and max similarity to the other classes."""
    m = np.asarray(matrix, dtype=np.float64)
    k = m.shape[0]
    off = m[~np.eye(k, dtype=bool)].reshape(k, k - 1)
    return np.diag(m).copy(), off.mean(axis=1), off.max(axis=1)


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------

PHASES = ("Event-occ", "Pre-event", "Post-event")


class PhaseTimer:
    """Accumulates wall-clock seconds per phase and per clip."""

    def __init__(self):
        self.samples = {p: [] for p in PHASES}
        self.totals = []
        self.runs = {p: 0 for p in PHASES}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.samples[name].append(time.perf_counter() - t0)
            self.runs[name] += 1

    @contextmanager
    def clip(self):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals.append(time.perf_counter() - t0)


def timing_report(timer):
    """Mean seconds per clip for each phase and in total.

    Phase means divide by the number of clips, so a phase skipped for some
    clips (pre-event, post-event) contributes zero for them and the phases
    still add up to at most the total.
    """
    n = len(timer.totals)
    if n == 0:
        raise ValueError("no clips were timed")
    row = {p: sum(timer.samples[p]) / n for p in PHASES}
    row["Total"] = sum(timer.totals) / n
    return {"clips": n, "runs": dict(timer.runs), "seconds": row}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def format_table(header, rows, floatfmt="{:.2f}"):
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append([floatfmt.format(v) if isinstance(v, float) else str(v) for v in r])
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(str(h) for h in header) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r) + "\n")


def confusion_rows(cm):
    acc = cm.per_class()
    return [
        [name, *map(int, cm.counts[i]), float(100 * acc[i]) if not np.isnan(acc[i]) else "-"]
        for i, name in enumerate(cm.labels)
    ]


def confusion_table(cm):
    header = ["truth\\pred", *range(len(cm.labels)), "acc%"]
    text = format_table(header, confusion_rows(cm))
    return text + f"average (unweighted) {100 * cm.average():.2f}%  overall {100 * cm.overall():.2f}%\n"


def write_confusion_pgm(path, cm, cell=8):
    """Row-normalised heat image: black = 0, white = all of the row."""
    rows = cm.counts.sum(axis=1, keepdims=True)
    frac = cm.counts / np.maximum(rows, 1)
    img = np.kron(np.rint(255 * frac), np.ones((cell, cell))).astype(np.uint8)
    write_pgm(path, img)


def timing_table(report):
    s = report["seconds"]
    header = ["", *PHASES, "Total"]
    return format_table(header, [["seconds/clip", *(float(s[k]) for k in (*PHASES, "Total"))]], "{:.4f}")
