import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from ongcmp import flow as F


def texture(seed, n=64):
    a = gaussian_filter(np.random.default_rng(seed).random((n, n)), 1.5)
    return (a - a.min()) / (a.max() - a.min()) * 255


def shifted(a, dx, dy):
    """Frame b with b(x) = a(x - d), so the true flow is d everywhere."""
    return F.warp(a, np.full_like(a, -dx), np.full_like(a, -dy))


def interior_epe(flow, dx, dy, margin=8):
    return float(np.hypot(flow.u - dx, flow.v - dy)[margin:-margin, margin:-margin].mean())


def test_identical_frames_zero_flow():
    a = texture(0)
    f = F.compute_flow(a, a)
    assert np.abs(f.u).max() < 1e-9 and np.abs(f.v).max() < 1e-9


@pytest.mark.parametrize("k", range(5))
def test_known_shift_recovered(k):
    dx, dy = np.random.default_rng(100 + k).uniform(-2, 2, 2)
    a = texture(k)
    assert interior_epe(F.compute_flow(a, shifted(a, dx, dy)), dx, dy) <= 0.5


def test_energy_never_increases():
    a = texture(1)
    trace = []
    F.compute_flow(a, shifted(a, 1.3, -0.7), F.FlowConfig(warps=2), trace=trace)
    assert len(trace) == 2 * F.FlowConfig().n_levels(64, 64)
    for e in trace:
        assert np.all(np.diff(e) <= 1e-12 * np.abs(e[:-1]) + 1e-15)


def test_check_energy_mode_runs():
    a = texture(2)
    F.compute_flow(a, shifted(a, 0.5, 0.5), F.FlowConfig(check_energy=True))


def test_energy_formula():
    u = np.array([[0.0, 1.0]])
    v = np.zeros((1, 2))
    ix = np.ones((1, 2))
    zeros = np.zeros((1, 2))
    # data: 0^2 + 1^2, smoothness: one horizontal edge with |du| = 1
    assert F.hs_energy(u, v, ix, zeros, zeros, 0.25) == pytest.approx(1 + 0.25)


def test_flow_input_validation():
    with pytest.raises(ValueError):
        F.compute_flow(np.zeros((20, 20)), np.zeros((20, 21)))
    with pytest.raises(ValueError):
        F.compute_flow(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        F.FlowField(np.zeros((2, 2)), np.full((2, 2), np.nan))


# ---------------------------------------------------------------------------
# colour encoding
# ---------------------------------------------------------------------------


def test_color_wheel_table():
    w = F.COLOR_WHEEL
    assert w.shape == (55, 3)
    # segment starts: red, yellow, green, cyan, blue, magenta
    for idx, rgb in [(0, (255, 0, 0)), (15, (255, 255, 0)), (21, (0, 255, 0)), (25, (0, 255, 255)), (36, (0, 0, 255)), (49, (255, 0, 255))]:
        assert tuple(w[idx]) == rgb
    assert tuple(w[14]) == (255, 238, 0)  # floor(255 * 14 / 15)
    assert tuple(w[54]) == (255, 0, 43)  # 255 - floor(255 * 5 / 6)


def _field(u, v):
    return F.FlowField(np.full((1, 1), u), np.full((1, 1), v))


@pytest.mark.parametrize(
    "u,v,rgb",
    [
        (1, 0, (255, 0, 43)),  # angle pi -> wheel[54]
        (-1, 0, (0, 209, 255)),  # angle 0 -> wheel[27]
        # angle pi/2 -> fk 40.5, halfway between wheel[40] (78, 0, 255) and wheel[41] (98, 0, 255)
        (0, -1, (88, 0, 255)),
    ],
)
def test_color_known_directions(u, v, rgb):
    assert tuple(F.colorize_flow(_field(u, v), 1.0)[0, 0]) == rgb


def test_zero_flow_is_white():
    assert tuple(F.colorize_flow(_field(0, 0), 1.0)[0, 0]) == (255, 255, 255)


def test_half_saturation_blends_to_white():
    # rad 0.5 toward wheel[27] = (0, 209, 255): 1 - 0.5 * (1 - c)
    expect = tuple(int(np.floor(255 * (1 - 0.5 * (1 - c / 255)))) for c in (0, 209, 255))
    assert tuple(F.colorize_flow(_field(-0.5, 0), 1.0)[0, 0]) == expect


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 10))
def test_color_scale_invariance(u, v, norm):
    a = F.colorize_flow(_field(u, v), norm)
    b = F.colorize_flow(_field(2 * u, 2 * v), 2 * norm)
    assert np.abs(a.astype(int) - b.astype(int)).max() <= 1


def test_colorize_rejects_bad_norm():
    with pytest.raises(ValueError):
        F.colorize_flow(_field(0, 0), 0.0)


def test_sequence_lengths_and_white_static_clip():
    frames = [np.full((16, 16, 3), 90, np.uint8)] * 17
    gcmp = F.flow_sequence(frames)
    assert len(gcmp) == 16
    assert all(np.all(g == 255) for g in gcmp)


def test_sequence_needs_two_frames():
    with pytest.raises(ValueError):
        F.flow_fields([np.zeros((16, 16))])


def test_norm_modes():
    fields = [_field(2, 0), _field(1, 0)]
    clip = F.colorize_sequence(fields, F.FlowConfig(norm_mode="clip"))
    frame = F.colorize_sequence(fields, F.FlowConfig(norm_mode="frame"))
    assert tuple(clip[0][0, 0]) == tuple(frame[0][0, 0]) == tuple(frame[1][0, 0])
    assert not np.array_equal(clip[0], clip[1])  # second field at half saturation
    with pytest.raises(ValueError):
        F.colorize_sequence(fields, F.FlowConfig(norm_mode="bogus"))


def test_min_norm_keeps_tiny_motion_pale():
    g = F.colorize_sequence([_field(0.01, 0)], F.FlowConfig(min_norm=1.0))[0]
    assert g.min() >= 250


def test_flo_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    f = F.FlowField(rng.standard_normal((5, 7)), rng.standard_normal((5, 7)))
    F.write_flo(tmp_path / "a.flo", f)
    g = F.read_flo(tmp_path / "a.flo")
    np.testing.assert_array_equal(g.u, f.u)
    np.testing.assert_array_equal(g.v, f.v)
    (tmp_path / "b.flo").write_bytes((tmp_path / "a.flo").read_bytes()[:-4])
    with pytest.raises(ValueError):
        F.read_flo(tmp_path / "b.flo")
