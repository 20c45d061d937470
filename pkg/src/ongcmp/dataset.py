"""Event labels, clips, segment model, windowing and on-disk formats."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .imageio import read_image, write_image

BASES = ("ThreePoint", "FreeThrow", "Layup", "OtherTwoPoint", "SlamDunk", "Steal")
OUTCOMES = ("Success", "Failure", "NotApplicable")
SPLITS = ("train", "test")

PRE_LEN = 18
POST_LEN = 10
WINDOW = 16


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class EventLabel:
    base: str
    outcome: str

    def __post_init__(self):
        if self.base not in BASES:
            raise DatasetError(f"unknown base event {self.base!r}")
        if self.outcome not in OUTCOMES:
            raise DatasetError(f"unknown outcome {self.outcome!r}")
        if (self.base == "Steal") != (self.outcome == "NotApplicable"):
            raise DatasetError(f"invalid combination {self.base}/{self.outcome}")

    @property
    def name(self):
        return self.base if self.base == "Steal" else f"{self.base}-{self.outcome}"

    @classmethod
    def parse(cls, name):
        if name == "Steal":
            return cls("Steal", "NotApplicable")
        base, _, outcome = name.partition("-")
        return cls(base, outcome)


ALL_LABELS = tuple(
    EventLabel(b, o) for b in BASES[:5] for o in ("Success", "Failure")
) + (EventLabel("Steal", "NotApplicable"),)


@dataclass
class VideoClip:
    """Frames as a (T, H, W, 3) uint8 array."""

    frames: np.ndarray
    fps: float = 25.0
    id: str = "clip"

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or self.frames.shape[3] != 3:
            raise DatasetError("clip frames must be a non-empty (T, H, W, 3) array")

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, sl):
        if not isinstance(sl, slice):
            return self.frames[sl]
        return VideoClip(self.frames[sl], self.fps, self.id)

    def __eq__(self, other):
        return (
            isinstance(other, VideoClip)
            and self.id == other.id
            and self.fps == other.fps
            and np.array_equal(self.frames, other.frames)
        )

    @property
    def size(self):
        return self.frames.shape[1:3]


@dataclass
class SegmentedEvent:
    pre: VideoClip
    occ: VideoClip
    post: VideoClip
    label: EventLabel | None = None

    def __len__(self):
        return len(self.pre) + len(self.occ) + len(self.post)


def split_segments(clip, pre_len=PRE_LEN, post_len=POST_LEN, label=None):
    """Partition a clip into pre-event, event-occ and post-event segments."""
    n = len(clip)
    if n <= pre_len + post_len:
        raise DatasetError(f"clip of {n} frames too short for {pre_len}+{post_len} context")
    return SegmentedEvent(clip[:pre_len], clip[pre_len : n - post_len], clip[n - post_len :], label)


def windows16(n, size=WINDOW):
    """Index ranges of length ``size`` covering ``range(n)``.

    Windows are non-overlapping with stride ``size``; a remainder is covered
    by a final window made of the last ``size`` indices.
    """
    if hasattr(n, "__len__"):
        n = len(n)
    if n < size:
        raise DatasetError(f"need at least {size} frames, got {n}")
    starts = list(range(0, n - size + 1, size))
    if starts[-1] + size < n:
        starts.append(n - size)
    return [range(s, s + size) for s in starts]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    """An annotated event: inclusive frame interval [start, end] in a source."""

    id: str
    start: int
    end: int
    label: EventLabel
    split: str = "train"

    def __post_init__(self):
        if self.start < 0 or self.start >= self.end:
            raise DatasetError(f"{self.id}: need 0 <= start < end, got [{self.start}, {self.end}]")
        if self.split not in SPLITS:
            raise DatasetError(f"{self.id}: unknown split {self.split!r}")
        if any(ch.isspace() for ch in self.id) or not self.id:
            raise DatasetError(f"invalid record id {self.id!r}")

    @property
    def length(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class ExtendedRecord:
    """An event widened by pre/post context, clamped to its source.

    ``frame_indices`` repeats the boundary frame for any context that falls
    outside the source, so its length is always ``length + pre + post``.
    """

    record: ManifestRecord
    start: int
    end: int
    pad_before: int
    pad_after: int
    pre_len: int = PRE_LEN
    post_len: int = POST_LEN

    @property
    def length(self):
        return self.pad_before + (self.end - self.start + 1) + self.pad_after

    def frame_indices(self):
        return (
            [self.start] * self.pad_before
            + list(range(self.start, self.end + 1))
            + [self.end] * self.pad_after
        )


def extend_event(record, source_len, pre_len=PRE_LEN, post_len=POST_LEN):
    if record.end >= source_len:
        raise DatasetError(f"{record.id}: interval exceeds source of {source_len} frames")
    lo = record.start - pre_len
    hi = record.end + post_len
    start = max(lo, 0)
    end = min(hi, source_len - 1)
    return ExtendedRecord(record, start, end, start - lo, hi - end, pre_len, post_len)


def extract_extended(frames, ext, fps=25.0):
    """Cut the extended event out of a source frame array as a VideoClip."""
    return VideoClip(np.asarray(frames)[ext.frame_indices()], fps, ext.record.id)


@dataclass
class ClipManifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def validate(self, source_lengths=None):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DatasetError(f"duplicate record id {r.id}")
            seen.add(r.id)
            if source_lengths is not None and r.end >= source_lengths[r.id]:
                raise DatasetError(f"{r.id}: interval outside source")


def save_manifest(path, manifest):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id start end base outcome split\n")
        for r in manifest:
            fh.write(f"{r.id} {r.start} {r.end} {r.label.base} {r.label.outcome} {r.split}\n")


def load_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise DatasetError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            rid, start, end, base, outcome, split = parts
            try:
                records.append(
                    ManifestRecord(rid, int(start), int(end), EventLabel(base, outcome), split)
                )
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    manifest = ClipManifest(records)
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# clips on disk
# ---------------------------------------------------------------------------


def save_clip(directory, clip, ext=".ppm"):
    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        write_image(os.path.join(directory, f"frame_{i:05d}{ext}"), frame)
    with open(os.path.join(directory, "clip.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"id = {clip.id}\nfps = {clip.fps!r}\nframes = {len(clip)}\n")


def load_clip(directory):
    meta_path = os.path.join(directory, "clip.txt")
    if not os.path.exists(meta_path):
        raise DatasetError(f"{directory}: missing clip.txt")
    meta = {}
    with open(meta_path, encoding="utf-8") as fh:
        for line in fh:
            k, _, v = line.partition("=")
            if v:
                meta[k.strip()] = v.strip()
    names = sorted(
        n for n in os.listdir(directory) if n.startswith("frame_") and n.endswith((".ppm", ".png"))
    )
    if not names:
        raise DatasetError(f"{directory}: no frames")
    if "frames" in meta and int(meta["frames"]) != len(names):
        raise DatasetError(f"{directory}: expected {meta['frames']} frames, found {len(names)}")
    frames = [read_image(os.path.join(directory, n)) for n in names]
    if len({f.shape for f in frames}) != 1:
        raise DatasetError(f"{directory}: frames differ in size")
    return VideoClip(np.stack(frames), float(meta.get("fps", 25.0)), meta.get("id", os.path.basename(directory)))
