import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ongcmp import kernels as K
from ongcmp._jit import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def _flow_inputs(seed, h=12, w=9):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((h, w)) for _ in range(5)]


@needs_numba
@pytest.mark.parametrize("parity", [0, 1])
def test_hs_sweep_backends_agree(parity):
    u, v, ix, iy, it = _flow_inputs(parity)
    u2, v2 = u.copy(), v.copy()
    K.hs_sweep_nb(u, v, ix, iy, it, 0.04, parity)
    K.hs_sweep_np(u2, v2, ix, iy, it, 0.04, parity)
    np.testing.assert_allclose(u, u2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(v, v2, rtol=1e-12, atol=1e-12)


@needs_numba
def test_hs_solve_backends_agree():
    u, v, ix, iy, it = _flow_inputs(3, 20, 17)
    u2, v2 = u.copy(), v.copy()
    K.hs_solve_nb(u, v, ix, iy, it, 0.01, 30)
    K.hs_solve_np(u2, v2, ix, iy, it, 0.01, 30)
    np.testing.assert_allclose(u, u2, rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(v, v2, rtol=1e-9, atol=1e-10)


def test_hs_sweep_only_touches_its_colour():
    u, v, ix, iy, it = _flow_inputs(4)
    before = u.copy()
    K.hs_sweep_np(u, v, ix, iy, it, 0.04, 0)
    rr, cc = np.indices(u.shape)
    odd = (rr + cc) % 2 == 1
    np.testing.assert_array_equal(u[odd], before[odd])


def test_hs_sweep_pixel_is_local_minimiser():
    # the centre pixel of a 3x3 grid is set to the solution of its 2x2 normal equations
    u, v, ix, iy, it = _flow_inputs(5, 3, 3)
    K.hs_sweep_np(u, v, ix, iy, it, 0.25, 0)
    r, c = 1, 1
    nb = [(0, 1), (2, 1), (1, 0), (1, 2)]
    ubar = np.mean([u[p] for p in nb])
    vbar = np.mean([v[p] for p in nb])
    lam = 0.25 * 4
    a = np.array([[ix[r, c] ** 2 + lam, ix[r, c] * iy[r, c]], [ix[r, c] * iy[r, c], iy[r, c] ** 2 + lam]])
    rhs = np.array([lam * ubar - ix[r, c] * it[r, c], lam * vbar - iy[r, c] * it[r, c]])
    np.testing.assert_allclose([u[r, c], v[r, c]], np.linalg.solve(a, rhs), rtol=1e-12)


@needs_numba
def test_bilinear_backends_agree():
    rng = np.random.default_rng(6)
    img = rng.random((10, 13))
    xs = rng.uniform(-3, 16, (7, 8))
    ys = rng.uniform(-3, 13, (7, 8))
    np.testing.assert_allclose(K.bilinear_sample_nb(img, xs, ys), K.bilinear_sample_np(img, xs, ys), atol=1e-12)


@pytest.mark.parametrize("fn", [K.bilinear_sample_np, K.bilinear_sample])
def test_bilinear_integer_points_and_midpoints(fn):
    img = np.arange(12, dtype=np.float64).reshape(3, 4)
    gy, gx = np.mgrid[0:3, 0:4].astype(np.float64)
    np.testing.assert_array_equal(fn(img, gx, gy), img)
    mid = fn(img, np.array([[0.5]]), np.array([[0.5]]))
    assert mid[0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)
    # outside the image the border is replicated
    assert fn(img, np.array([[-5.0]]), np.array([[10.0]]))[0, 0] == img[2, 0]


def im2col_loops(xp, kh, kw, stride, oh, ow):
    c, b = xp.shape[:2]
    cols = np.zeros((c * kh * kw, b * oh * ow))
    for ch in range(c):
        for a in range(kh):
            for e in range(kw):
                for n in range(b):
                    for i in range(oh):
                        for j in range(ow):
                            cols[(ch * kh + a) * kw + e, (n * oh + i) * ow + j] = xp[ch, n, i * stride + a, j * stride + e]
    return cols


@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_matches_loops(stride):
    rng = np.random.default_rng(7)
    xp = rng.standard_normal((2, 3, 7, 7))
    oh = ow = (7 - 3) // stride + 1
    np.testing.assert_array_equal(K.im2col(xp, 3, 3, stride, oh, ow), im2col_loops(xp, 3, 3, stride, oh, ow))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_col2im_is_adjoint_of_im2col(kh, kw, stride, seed):
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((2, 2, 6, 7))
    oh = (6 - kh) // stride + 1
    ow = (7 - kw) // stride + 1
    cols = K.im2col(xp, kh, kw, stride, oh, ow)
    r = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * r)
    rhs = np.sum(xp * K.col2im(r, xp.shape, kh, kw, stride, oh, ow))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@needs_numba
def test_maxpool_backends_agree():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 6, 8)).astype(np.float32)
    a, ia = K.maxpool2_nb(x)
    b, ib = K.maxpool2_np(x)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ia, ib)
    d = rng.standard_normal(a.shape).astype(np.float32)
    np.testing.assert_array_equal(K.maxpool2_backward_nb(d, ia, 6, 8), K.maxpool2_backward_np(d, ib, 6, 8))


@pytest.mark.parametrize("fn", [K.maxpool2_np, K.maxpool2])
def test_maxpool_ties_pick_first(fn):
    x = np.ones((1, 1, 2, 2))
    out, arg = fn(x)
    assert out[0, 0, 0, 0] == 1 and arg[0, 0, 0, 0] == 0


def test_maxpool_values():
    x = np.array([[1, 5, 2, 0], [3, 4, 8, 7]], dtype=np.float64)[None, None]
    out, arg = K.maxpool2(x)
    np.testing.assert_array_equal(out[0, 0, 0], [5, 8])
    np.testing.assert_array_equal(arg[0, 0, 0], [1, 2])
    dx = K.maxpool2_backward(np.array([[[[10.0, 20.0]]]]), arg, 2, 4)
    np.testing.assert_array_equal(dx[0, 0], [[0, 10, 0, 0], [0, 0, 20, 0]])


def test_env_flag_selects_numpy_backend():
    import os
    import subprocess
    import sys

    env = {**os.environ, "ONGCMP_NO_NUMBA": "1"}
    out = subprocess.run(
        [sys.executable, "-c", "from ongcmp import kernels as k; print(k.BACKEND, k.hs_solve is k.hs_solve_np)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.split() == ["numpy", "True"]
