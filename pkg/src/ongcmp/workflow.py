"""Dataset preparation, stage training, prediction and ablations.

These are the building blocks behind the command-line tool; they work on
:class:`~ongcmp.pipeline.PreparedClip` lists so data is decoded and converted
to GCMP images once per run.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .config import format_value, snapshot
from .dataset import load_clip, load_manifest
from .evaluation import PhaseTimer, accuracy_report, correlate_features, mean_average_precision
from .flow import FlowConfig
from .models import classify_frames_sf, classify_sequence, scale_input, set_params, vote_sf
from .ontology import V6_ORDER, VF_ORDER, predict_event, vf_index
from .pipeline import flow_fingerprint, prepare_clip, window_stack
from .training import STAGES, Hyper, build_model, stage_label, train

VF_NAMES = VF_ORDER


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def prepare_generated(clips, manifest, flow_cfg=FlowConfig(), size=32):
    return [prepare_clip(c, r, flow_cfg, size) for c, r in zip(clips, manifest)]


def prepare_dataset(data_dir, flow_cfg=FlowConfig(), size=32, splits=None):
    """Load ``data_dir/manifest.txt`` and its clips, converting each once.

    Converted clips are cached under ``data_dir/prepared/<fingerprint>`` so
    later commands reuse them; the fingerprint covers the flow settings and
    the backbone input size.
    """
    manifest = load_manifest(os.path.join(data_dir, "manifest.txt"))
    cache = os.path.join(data_dir, "prepared", flow_fingerprint(flow_cfg, size))
    out = []
    for rec in manifest:
        if splits is not None and rec.split not in splits:
            continue
        path = os.path.join(cache, f"{rec.id}.npz")
        clip = None if os.path.exists(path) else load_clip(os.path.join(data_dir, "clips", rec.id))
        out.append(prepare_clip(clip, rec, flow_cfg, size, cache_dir=cache))
    return out


def data_fingerprint(data_dir, flow_cfg, size):
    digest = file_digest(os.path.join(data_dir, "manifest.txt"))
    return f"{digest[:16]}-{flow_fingerprint(flow_cfg, size)}"


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def stage_samples(prepared, stage, kind="gcmp", split="train", window=16):
    """Training arrays for ``stage``: sequence windows or single frames, with labels."""
    segment, model_kind, _ = STAGES[stage]
    xs, ys = [], []
    for p in prepared:
        if split is not None and p.split != split:
            continue
        y = stage_label(stage, p.label)
        if y is None:
            continue
        seq = p.segment(segment, kind)
        samples = window_stack(seq, window) if model_kind == "sequence" else seq
        xs.append(samples)
        ys.extend([y] * len(samples))
    if not xs:
        raise ValueError(f"no {split} samples for stage {stage}")
    return np.concatenate(xs), np.asarray(ys, dtype=np.int64)


@dataclass
class StageModel:
    stage: str
    kind: str  # "gcmp" or "raw" input
    model: object


def train_stage(prepared, stage, hyper=Hyper(), seed=0, kind="gcmp", track_epoch_loss=False):
    x, y = stage_samples(prepared, stage, kind, "train", hyper.window)
    _, model_kind, space = STAGES[stage]
    result = train(x, y, len(space), model_kind, hyper, seed, track_epoch_loss)
    return StageModel(stage, kind, result.model), result


def save_stage(path, sm, hyper, seed, fingerprint=""):
    checkpoint.save_params(path, {k: p.data for k, p in sm.model.params().items()})
    fields = {"stage": sm.stage, "input": sm.kind, "seed": seed, "data": fingerprint}
    fields["labels"] = ",".join(STAGES[sm.stage][2])
    fields.update({k: format_value(v) for k, v in snapshot(hyper, "train.").items()})
    checkpoint.write_sidecar(path + ".txt", fields)


def load_stage(path):
    from .config import apply_overrides

    meta = checkpoint.read_sidecar(path + ".txt")
    stage = meta.get("stage")
    if stage not in STAGES:
        raise ValueError(f"{path}: unknown stage {stage!r}")
    hyper = apply_overrides(Hyper(), meta, "train.")
    _, model_kind, space = STAGES[stage]
    model = build_model(model_kind, len(space), hyper, 0)
    set_params(model, checkpoint.load_params(path))
    return StageModel(stage, meta.get("input", "gcmp"), model), hyper


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass
class Prediction:
    id: str
    truth: object
    result: object

    @property
    def vf_index(self):
        return self.result.vf.index


class CallCounter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self):
        self.calls += 1
        return self.fn()


def predict_clip(p, occ, pre, post, window=16, timer=None):
    """Cascade + fusion for one prepared clip; ``timer`` records phase times."""
    timer = timer or PhaseTimer()

    def run_occ():
        with timer.phase("Event-occ"):
            return classify_sequence(p.segment("occ", occ.kind), occ.model, window).g

    def run_pre():
        with timer.phase("Pre-event"):
            return classify_sequence(p.segment("pre", pre.kind), pre.model, window).g

    def run_post():
        with timer.phase("Post-event"):
            return classify_frames_sf(p.segment("post", post.kind), post.model)

    with timer.clip():
        result = predict_event(run_occ, run_pre, run_post)
    return Prediction(p.id, p.label, result)


def predict_all(prepared, occ, pre, post, split="test", window=16, timer=None):
    return [
        predict_clip(p, occ, pre, post, window, timer)
        for p in prepared
        if split is None or p.split == split
    ]


def _vec(v):
    return ",".join(f"{x:.6f}" for x in v)


def format_record(pred):
    """``id vf_index label g5 g2|- tally|- conf=<11 values>``."""
    r = pred.result
    g2 = _vec(r.g2) if r.g2 is not None else "-"
    tally = f"S{r.tally[0]}:F{r.tally[1]}" if r.tally is not None else "-"
    conf = ",".join(f"{x:.9g}" for x in r.confidence)
    return f"{pred.id} {r.vf.index} {VF_NAMES[r.vf.index]} {_vec(r.g5)} {g2} {tally} conf={conf}"


def parse_record(line):
    parts = line.split()
    if len(parts) != 7 or not parts[6].startswith("conf="):
        raise ValueError(f"malformed prediction record: {line!r}")
    idx = int(parts[1])
    if not 0 <= idx < len(VF_NAMES) or VF_NAMES[idx] != parts[2]:
        raise ValueError(f"inconsistent VF index/label in {line!r}")
    conf = np.array([float(x) for x in parts[6][5:].split(",")])
    if conf.shape != (11,):
        raise ValueError(f"expected 11 confidences in {line!r}")
    return parts[0], idx, conf


def write_predictions(path, preds):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id vf_index label g_occ g_pre tally conf\n")
        for p in preds:
            fh.write(format_record(p) + "\n")


def read_predictions(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(parse_record(line))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalSummary:
    confusion: object
    ap: object

    @property
    def accuracy(self):
        return self.confusion.overall()


def evaluate_records(records, truth):
    """``records``: (id, vf_index, confidences); ``truth``: id -> EventLabel."""
    missing = [rid for rid, _, _ in records if rid not in truth]
    if missing:
        raise ValueError(f"predictions for unknown clips: {missing[:5]}")
    y = [vf_index(truth[rid]) for rid, _, _ in records]
    cm = accuracy_report([(idx, t) for (_, idx, _), t in zip(records, y)], VF_NAMES)
    ap = mean_average_precision(np.stack([c for _, _, c in records]), np.array(y), [r[0] for r in records])
    return EvalSummary(cm, ap)


def evaluate_predictions(preds):
    records = [(p.id, p.vf_index, p.result.confidence) for p in preds]
    return evaluate_records(records, {p.id: p.truth for p in preds})


def six_event_report(pairs):
    """Base-event (6-class) confusion from (predicted base, true base) name pairs."""
    return accuracy_report([(V6_ORDER.index(a), V6_ORDER.index(b)) for a, b in pairs], V6_ORDER)


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


def stage_accuracy(prepared, sm, split="test", window=16):
    """Clip-level accuracy of a sequence stage on its own label space."""
    segment = STAGES[sm.stage][0]
    hits = n = 0
    for p in prepared:
        if p.split != split:
            continue
        y = stage_label(sm.stage, p.label)
        if y is None:
            continue
        g = classify_sequence(p.segment(segment, sm.kind), sm.model, window).g
        hits += int(np.argmax(g)) == y
        n += 1
    return hits / n


def ablate_gcmp(prepared, hyper=Hyper(), seeds=(0, 1, 2), stage="occ5"):
    """Twin models that differ only in raw-frame vs GCMP input."""
    out = {"gcmp": [], "raw": []}
    for seed in seeds:
        for kind in ("gcmp", "raw"):
            sm, _ = train_stage(prepared, stage, hyper, seed, kind)
            out[kind].append(stage_accuracy(prepared, sm, window=hyper.window))
    out["mean"] = {k: float(np.mean(out[k])) for k in ("gcmp", "raw")}
    return out


def ablate_ontology(prepared, occ, pre, post, flat, window=16):
    """Cascade against a flat six-class occ-only classifier.

    Both variants share the same success/failure network, so the 11-class
    difference comes from the base-event decision alone.
    """
    cascade_pairs, flat_pairs = [], []
    cascade_vf, flat_vf, truth_vf = [], [], []
    for p in prepared:
        if p.split != "test":
            continue
        res = predict_clip(p, occ, pre, post, window).result
        cascade_pairs.append((res.label.base, p.label.base))
        cascade_vf.append(res.vf.index)
        g6 = classify_sequence(p.segment("occ", flat.kind), flat.model, window).g
        base = V6_ORDER[int(np.argmax(g6))]
        if base == "Steal":
            idx = VF_NAMES.index("Steal")
        else:
            outcome = vote_sf(classify_frames_sf(p.segment("post", post.kind), post.model))[0]
            idx = VF_NAMES.index(f"{base}-{outcome}")
        flat_pairs.append((base, p.label.base))
        flat_vf.append(idx)
        truth_vf.append(vf_index(p.label))
    report = {}
    for name, pairs, vf in (("cascade", cascade_pairs, cascade_vf), ("flat", flat_pairs, flat_vf)):
        six = six_event_report(pairs)
        acc = six.per_class()
        report[name] = {
            "six": six,
            "eleven": accuracy_report(list(zip(vf, truth_vf)), VF_NAMES),
            "layup_other2": float(np.nanmean(acc[[V6_ORDER.index("Layup"), V6_ORDER.index("OtherTwoPoint")]])),
        }
    return report


# ---------------------------------------------------------------------------
# feature correlation
# ---------------------------------------------------------------------------

FEATURE_KINDS = {
    # name -> (input kind, per-frame or sequence-mean)
    "RGB_DF_VF": ("raw", False),
    "RGB_DF_SVF": ("raw", True),
    "GCMP_DF_VF": ("gcmp", False),
    "GCMP_DF_SVF": ("gcmp", True),
}


def deep_features(prepared, model, feature_kind, segment, label_fn, split="test"):
    """Backbone features of every clip (or frame) with a class key.

    ``label_fn`` maps an :class:`EventLabel` to the class key or None to skip
    the clip. ``segment`` is a segment name or a tuple of names that are
    concatenated in time. Sequence features are the temporal mean of
    per-frame features.
    """
    segments = (segment,) if isinstance(segment, str) else tuple(segment)
    kind, sequence = FEATURE_KINDS[feature_kind]
    backbone = model.backbone
    feats, labels = [], []
    for p in prepared:
        if split is not None and p.split != split:
            continue
        key = label_fn(p.label)
        if key is None:
            continue
        x = np.concatenate([p.segment(s, kind) for s in segments])
        f, _ = backbone.forward(scale_input(x))
        if sequence:
            feats.append(f.mean(axis=0))
            labels.append(key)
        else:
            feats.extend(f)
            labels.extend([key] * len(f))
    return np.asarray(feats, dtype=np.float64), labels


def correlation_study(prepared, occ, post, split="test"):
    """Class similarity tables behind the motion-pattern and outcome analyses.

    GCMP_DF_SVF over base events uses the occ classifier's backbone on the
    event-occ segment alone and on pre-event + event-occ; outcome tables use
    post-event segments of non-steal clips.
    """
    out = {}
    for name, segment in (("occ", "occ"), ("pre+occ", ("pre", "occ"))):
        f, y = deep_features(prepared, occ.model, "GCMP_DF_SVF", segment, lambda lab: lab.base, split)
        out[f"GCMP_DF_SVF/base/{name}"] = correlate_features(f, y, [b for b in V6_ORDER if b in set(y)])
    outcome = lambda lab: None if lab.base == "Steal" else lab.outcome  # noqa: E731
    f, y = deep_features(prepared, post.model, "RGB_DF_VF", "post", outcome, split)
    out["RGB_DF_VF/outcome"] = correlate_features(f, y, ["Success", "Failure"])
    f, y = deep_features(prepared, occ.model, "GCMP_DF_SVF", "post", outcome, split)
    out["GCMP_DF_SVF/outcome"] = correlate_features(f, y, ["Success", "Failure"])
    return out
