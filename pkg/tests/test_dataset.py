import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ongcmp import dataset as D
from ongcmp.flow import flow_fields
from ongcmp.synthetic import SynthConfig, class_labels, gen_synthetic


def _clip(n, size=4, cid="c"):
    frames = np.arange(n, dtype=np.uint8)[:, None, None, None] * np.ones((1, size, size, 3), np.uint8)
    return D.VideoClip(frames, 25.0, cid)


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def test_eleven_labels():
    names = [lab.name for lab in D.ALL_LABELS]
    assert len(names) == 11 == len(set(names))
    assert names[0] == "ThreePoint-Success" and names[-1] == "Steal"


@pytest.mark.parametrize("base,outcome", [("Steal", "Success"), ("Layup", "NotApplicable"), ("Hook", "Success"), ("Layup", "Maybe")])
def test_invalid_labels(base, outcome):
    with pytest.raises(D.DatasetError):
        D.EventLabel(base, outcome)


def test_label_parse_round_trip():
    for lab in D.ALL_LABELS:
        assert D.EventLabel.parse(lab.name) == lab


# ---------------------------------------------------------------------------
# segments and windows
# ---------------------------------------------------------------------------


def test_split_segments_lengths():
    seg = D.split_segments(_clip(60))
    assert (len(seg.pre), len(seg.occ), len(seg.post)) == (18, 32, 10)
    assert seg.occ.frames[0, 0, 0, 0] == 18 and seg.post.frames[0, 0, 0, 0] == 50


def test_split_segments_too_short():
    with pytest.raises(D.DatasetError):
        D.split_segments(_clip(28))


@settings(max_examples=100, deadline=None)
@given(st.integers(29, 300))
def test_segments_partition_the_clip(n):
    seg = D.split_segments(_clip(n))
    assert len(seg) == n
    joined = np.concatenate([seg.pre.frames, seg.occ.frames, seg.post.frames])
    np.testing.assert_array_equal(joined, _clip(n).frames)


@pytest.mark.parametrize(
    "n,starts",
    [(16, [0]), (32, [0, 16]), (40, [0, 16, 24]), (17, [0, 1])],
)
def test_windows16_examples(n, starts):
    assert [w.start for w in D.windows16(n)] == starts


@settings(max_examples=200, deadline=None)
@given(st.integers(16, 500))
def test_windows16_cover_exactly(n):
    wins = D.windows16(n)
    assert all(len(w) == 16 for w in wins)
    assert set().union(*map(set, wins)) == set(range(n))
    assert wins[-1][-1] == n - 1


def test_windows16_too_short():
    with pytest.raises(D.DatasetError):
        D.windows16(15)


# ---------------------------------------------------------------------------
# manifest and extension
# ---------------------------------------------------------------------------


def _rec(rid="a", start=30, end=40, split="train"):
    return D.ManifestRecord(rid, start, end, D.EventLabel("Layup", "Success"), split)


def test_extend_inside_source():
    ext = D.extend_event(_rec(), 100)
    assert (ext.start, ext.end, ext.pad_before, ext.pad_after) == (12, 50, 0, 0)
    assert ext.length == 11 + 28


def test_extend_pads_at_edges():
    ext = D.extend_event(_rec(start=5, end=95), 100)
    idx = ext.frame_indices()
    assert len(idx) == 91 + 28
    assert idx[:14] == [0] * 14 and idx[13:15] == [0, 1]
    assert idx[-6:] == [99] * 6


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 200), st.integers(1, 50), st.integers(0, 50))
def test_extend_length_invariant(start, length, tail):
    rec = _rec(start=start, end=start + length)
    ext = D.extend_event(rec, start + length + 1 + tail)
    assert len(ext.frame_indices()) == length + 1 + 28
    assert ext.length == length + 1 + 28


def test_extend_outside_source():
    with pytest.raises(D.DatasetError):
        D.extend_event(_rec(end=40), 40)


def test_extract_extended_frames():
    clip = _clip(50)
    out = D.extract_extended(clip.frames, D.extend_event(_rec(start=10, end=20), 50))
    assert out.frames[:, 0, 0, 0].tolist() == [0] * 8 + list(range(0, 31))


@pytest.mark.parametrize("kwargs", [dict(start=5, end=5), dict(start=-1), dict(split="val"), dict(rid="a b")])
def test_record_validation(kwargs):
    with pytest.raises(D.DatasetError):
        _rec(**kwargs)


def test_manifest_round_trip(tmp_path):
    man = D.ClipManifest([_rec("a"), _rec("b", split="test")])
    D.save_manifest(tmp_path / "m.txt", man)
    back = D.load_manifest(tmp_path / "m.txt")
    assert back.records == man.records
    assert [r.id for r in back.split("test")] == ["b"]


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("a 1 2 Layup Success\n")
    with pytest.raises(D.DatasetError, match=":1:"):
        D.load_manifest(p)
    p.write_text("a 1 2 Layup Success train\na 3 4 Layup Success train\n")
    with pytest.raises(D.DatasetError, match="duplicate"):
        D.load_manifest(p)
    p.write_text("a 1 2 Steal Success train\n")
    with pytest.raises(D.DatasetError):
        D.load_manifest(p)


@pytest.mark.parametrize("ext", [".ppm", ".png"])
def test_clip_round_trip(tmp_path, ext):
    rng = np.random.default_rng(0)
    clip = D.VideoClip(rng.integers(0, 256, (3, 5, 6, 3), dtype=np.uint8), 30.0, "x1")
    D.save_clip(tmp_path / "c", clip, ext)
    assert D.load_clip(tmp_path / "c") == clip


def test_clip_load_errors(tmp_path):
    with pytest.raises(D.DatasetError):
        D.load_clip(tmp_path)
    D.save_clip(tmp_path / "c", _clip(3))
    (tmp_path / "c" / "frame_00002.ppm").unlink()
    with pytest.raises(D.DatasetError, match="expected 3"):
        D.load_clip(tmp_path / "c")


def test_videoclip_validation():
    with pytest.raises(D.DatasetError):
        D.VideoClip(np.zeros((0, 4, 4, 3), np.uint8))
    with pytest.raises(D.DatasetError):
        D.VideoClip(np.zeros((2, 4, 4), np.uint8))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def test_generator_counts_and_splits():
    cfg = SynthConfig(classes=2, per_class=3, test_per_class=1, size=32, frames=30, seed=5)
    clips, man = gen_synthetic(cfg)
    assert len(clips) == len(man) == 6
    assert [r.split for r in man] == ["train", "train", "test"] * 2
    assert all(c.frames.shape == (30, 32, 32, 3) for c in clips)
    for c, r in zip(clips, man):
        assert c.id == r.id
        assert D.extend_event(r, len(c)).frame_indices() == list(range(30))


def test_generator_deterministic_and_seed_sensitive():
    cfg = SynthConfig(classes=1, per_class=2, size=16, frames=30, seed=1)
    a, _ = gen_synthetic(cfg)
    b, _ = gen_synthetic(cfg)
    c, _ = gen_synthetic(SynthConfig(classes=1, per_class=2, size=16, frames=30, seed=2))
    assert all(x == y for x, y in zip(a, b))
    assert not np.array_equal(a[0].frames, c[0].frames)
    assert not np.array_equal(a[0].frames, c[1].frames)


def test_outcomes_alternate():
    assert [lab.outcome for lab in class_labels("Layup", 4)] == ["Success", "Failure"] * 2
    assert {lab.name for lab in class_labels("Steal", 3)} == {"Steal"}


@pytest.mark.parametrize("kwargs", [dict(classes=7), dict(per_class=0), dict(test_per_class=5, per_class=4), dict(size=8), dict(frames=28)])
def test_generator_config_errors(kwargs):
    with pytest.raises(D.DatasetError):
        SynthConfig(**kwargs).validate()


def _mean_flow(clips, man, base, segment):
    fields = []
    for c, r in zip(clips, man):
        if r.label.base == base:
            flows = flow_fields(getattr(D.split_segments(c), segment).frames)
            fields.append(np.mean([np.stack([f.u, f.v]) for f in flows], axis=0))
    return np.mean(fields, axis=0)


def test_layup_and_other_two_point_differ_only_before_the_event():
    clips, man = gen_synthetic(SynthConfig(classes=4, per_class=4, test_per_class=0, seed=0))
    diff = {
        seg: float(np.hypot(*(_mean_flow(clips, man, "Layup", seg) - _mean_flow(clips, man, "OtherTwoPoint", seg))).mean())
        for seg in ("pre", "occ")
    }
    assert diff["occ"] < 0.7 < diff["pre"], diff
