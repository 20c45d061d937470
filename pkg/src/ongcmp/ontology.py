"""Two-stage cascade, Kronecker fusion and final 11-class vector assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ALL_LABELS, BASES
from .tensor import argmax

V5_ORDER = ("ThreePoint", "FreeThrow", "Layup+OtherTwoPoint", "SlamDunk", "Steal")
V2_ORDER = ("Layup", "OtherTwoPoint")
V6_ORDER = BASES
V5ELEM_ORDER = BASES[:5]
VSF_ORDER = ("Success", "Failure")
VF_ORDER = tuple(lab.name for lab in ALL_LABELS)
MERGED_INDEX = 2

KIND_LENGTHS = {"V5": 5, "V2": 2, "VSF": 2, "V6": 6, "V5elem": 5, "Vensem": 10, "VF": 11}
# kinds that must be exactly one-hot (the rest may also be all zero)
ONE_HOT_KINDS = {"V5", "V2", "VSF", "V6", "VF"}


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class LabelVector:
    kind: str
    entries: tuple

    def __post_init__(self):
        if self.kind not in KIND_LENGTHS:
            raise FusionError(f"unknown vector kind {self.kind!r}")
        entries = tuple(int(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if len(entries) != KIND_LENGTHS[self.kind]:
            raise FusionError(f"{self.kind} needs {KIND_LENGTHS[self.kind]} entries, got {len(entries)}")
        if any(e not in (0, 1) for e in entries):
            raise FusionError(f"{self.kind} entries must be 0 or 1")
        ones = sum(entries)
        if ones > 1 or (self.kind in ONE_HOT_KINDS and ones != 1):
            raise FusionError(f"{self.kind} has {ones} ones")

    @classmethod
    def one_hot(cls, kind, index):
        e = [0] * KIND_LENGTHS[kind]
        e[index] = 1
        return cls(kind, e)

    @classmethod
    def zeros(cls, kind):
        return cls(kind, [0] * KIND_LENGTHS[kind])

    @property
    def index(self):
        """Position of the single 1, or None for an all-zero vector."""
        return self.entries.index(1) if 1 in self.entries else None

    def array(self):
        return np.array(self.entries, dtype=np.int64)


def vf_index(label):
    """Position of an :class:`EventLabel` in the 11-class output vector."""
    if label.base == "Steal":
        return 10
    return 2 * V5ELEM_ORDER.index(label.base) + VSF_ORDER.index(label.outcome)


def vf_label(index):
    return ALL_LABELS[index]


def _probs(pred):
    g = getattr(pred, "g", pred)
    return np.asarray(g, dtype=np.float64)


def cascade(g5, two_class):
    """Stage-1 5-class decision, refined by ``two_class()`` only for the merged class.

    ``two_class`` is a zero-argument callable returning a prediction over
    (Layup, OtherTwoPoint); it is not called unless the merged class wins.
    Returns ``(V6, g2)`` where ``g2`` is None when stage two was skipped.
    """
    g = _probs(g5)
    if g.shape != (5,):
        raise FusionError("stage-1 prediction must have 5 entries")
    top = argmax(g)
    if top != MERGED_INDEX:
        return LabelVector.one_hot("V6", V6_ORDER.index(V5_ORDER[top])), None
    g2 = _probs(two_class())
    if g2.shape != (2,):
        raise FusionError("stage-2 prediction must have 2 entries")
    return LabelVector.one_hot("V6", V6_ORDER.index(V2_ORDER[argmax(g2)])), g2


def v5elem_from_v6(v6):
    """Drop the steal entry: the base one-hot for non-steal events, zeros otherwise."""
    if v6.kind != "V6":
        raise FusionError("expected a V6 vector")
    return LabelVector("V5elem", v6.entries[:5])


def kron_fuse(v5elem, vsf):
    if v5elem.kind != "V5elem" or vsf.kind != "VSF":
        raise FusionError(f"kron_fuse needs (V5elem, VSF), got ({v5elem.kind}, {vsf.kind})")
    return LabelVector("Vensem", np.kron(v5elem.array(), vsf.array()))


def final_vector(vensem, v6):
    if vensem.kind != "Vensem" or v6.kind != "V6":
        raise FusionError(f"final_vector needs (Vensem, V6), got ({vensem.kind}, {v6.kind})")
    steal = v6.entries[5] == 1
    if steal and vensem.index is not None:
        raise FusionError("steal event with a non-zero success/failure part")
    if not steal and (vensem.index is None or vensem.index // 2 != v6.index):
        raise FusionError("base event of the fused vector disagrees with the six-event vector")
    return LabelVector("VF", vensem.entries + (v6.entries[5],))


@dataclass
class EventResult:
    vf: LabelVector
    g5: np.ndarray
    g2: np.ndarray | None = None
    # (n_success, n_failure), None for steals
    tally: tuple | None = None
    p_sf: np.ndarray | None = None
    confidence: np.ndarray = field(default_factory=lambda: np.zeros(11))

    @property
    def label(self):
        return vf_label(self.vf.index)


def event_confidence(g5, g2, p_sf):
    """Soft 11-vector used only for ranking (mAP); the decision itself stays hard.

    Base score is the stage-1 probability, with the merged class split by the
    stage-2 probabilities (evenly if stage two did not run); outcome score is
    the mean per-frame success/failure probability (evenly if SF was skipped).
    """
    g5 = np.asarray(g5, dtype=np.float64)
    split = np.full(2, 0.5) if g2 is None else np.asarray(g2, dtype=np.float64)
    base = np.array([g5[0], g5[1], g5[2] * split[0], g5[2] * split[1], g5[3]])
    sf = np.full(2, 0.5) if p_sf is None else np.asarray(p_sf, dtype=np.float64).mean(axis=0)
    return np.concatenate([np.kron(base, sf), [g5[4]]])


def predict_event(occ_fn, pre_fn, post_fn):
    """Run the full decision layer for one event.

    ``occ_fn()`` gives the 5-class occ prediction, ``pre_fn()`` the 2-class
    pre-event prediction and ``post_fn()`` per-frame success/failure
    probabilities (T x 2). The callables let the caller defer, count or stub
    each branch; ``pre_fn`` runs only for the merged class and ``post_fn``
    never runs for a steal.
    """
    from .models import vote_sf

    g5 = _probs(occ_fn())
    v6, g2 = cascade(g5, pre_fn)
    if v6.entries[5] == 1:
        vsf_tally, p_sf = None, None
        vensem = LabelVector.zeros("Vensem")
    else:
        p_sf = np.asarray(post_fn(), dtype=np.float64)
        outcome, n_s, n_f = vote_sf(p_sf)
        vsf_tally = (n_s, n_f)
        vsf = LabelVector.one_hot("VSF", VSF_ORDER.index(outcome))
        vensem = kron_fuse(v5elem_from_v6(v6), vsf)
    vf = final_vector(vensem, v6)
    return EventResult(vf, g5, g2, vsf_tally, p_sf, event_confidence(g5, g2, p_sf))
