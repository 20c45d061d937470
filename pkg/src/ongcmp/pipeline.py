"""Glue between clips on disk, GCMP extraction and the stage classifiers."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import (
    POST_LEN,
    PRE_LEN,
    extend_event,
    extract_extended,
    split_segments,
    windows16,
)
from .flow import FlowConfig, colorize_sequence, flow_fields
from .models import to_model_input


@dataclass
class PreparedClip:
    """Backbone-sized uint8 inputs, each (T, 3, S, S)."""

    id: str
    label: object
    split: str
    gcmp_pre: np.ndarray
    gcmp_occ: np.ndarray
    gcmp_post: np.ndarray
    raw_pre: np.ndarray
    raw_occ: np.ndarray
    raw_post: np.ndarray

    def segment(self, name, kind="gcmp"):
        return getattr(self, f"{kind}_{name}")


def segment_event(clip, record=None):
    """Cut a source clip into pre / occ / post segments.

    With a manifest ``record`` the annotated interval is first widened by the
    default context (boundary frames repeated near the source edges).
    """
    if record is not None:
        clip = extract_extended(clip.frames, extend_event(record, len(clip)), clip.fps)
    return split_segments(clip, PRE_LEN, POST_LEN, record.label if record is not None else None)


def prepare_segments(seg, flow_cfg, size):
    out = {}
    for name in ("pre", "occ", "post"):
        frames = getattr(seg, name).frames
        gcmp = colorize_sequence(flow_fields(frames, flow_cfg), flow_cfg) if len(frames) > 1 else []
        out[f"gcmp_{name}"] = to_model_input(gcmp, size) if gcmp else np.zeros((0, 3, size, size), np.uint8)
        # drop the first frame so raw and GCMP sequences have equal length
        raw = frames[1:] if name != "post" else frames
        out[f"raw_{name}"] = to_model_input(list(raw), size)
    return out


def flow_fingerprint(flow_cfg, size):
    blob = json.dumps({"flow": asdict(flow_cfg), "size": size}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def prepare_clip(clip, record, flow_cfg=FlowConfig(), size=32, cache_dir=None):
    path = None
    if cache_dir is not None:
        path = os.path.join(cache_dir, f"{record.id}.npz")
        if os.path.exists(path):
            with np.load(path) as z:
                arrays = {k: z[k] for k in z.files}
            return PreparedClip(record.id, record.label, record.split, **arrays)
    arrays = prepare_segments(segment_event(clip, record), flow_cfg, size)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = path + ".tmp.npz"
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    return PreparedClip(record.id, record.label, record.split, **arrays)


def window_stack(seq, window=16):
    """(T, 3, S, S) -> (W, window, 3, S, S) using the 16-frame windowing rule."""
    return np.stack([seq[list(w)] for w in windows16(len(seq), window)])
