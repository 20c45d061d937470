"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version and a vectorised
numpy version with the same arithmetic. The public names at the bottom of the
module are bound to one or the other depending on :data:`ongcmp._jit.USE_NUMBA`;
both variants stay importable (``*_nb`` / ``*_np``) so tests and the benchmark
can compare them directly.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Horn-Schunck red-black Gauss-Seidel sweep
# ---------------------------------------------------------------------------


@njit(cache=True)
def hs_sweep_nb(u, v, ix, iy, it, alpha2, parity):
    """Update in place every pixel with (row + col) % 2 == parity.

    Each pixel is set to the exact minimiser of the energy given its four
    neighbours, which never increases the energy.
    """
    h, w = u.shape
    for r in range(h):
        c0 = (parity + r) % 2
        for c in range(c0, w, 2):
            su = 0.0
            sv = 0.0
            n = 0
            if r > 0:
                su += u[r - 1, c]
                sv += v[r - 1, c]
                n += 1
            if r < h - 1:
                su += u[r + 1, c]
                sv += v[r + 1, c]
                n += 1
            if c > 0:
                su += u[r, c - 1]
                sv += v[r, c - 1]
                n += 1
            if c < w - 1:
                su += u[r, c + 1]
                sv += v[r, c + 1]
                n += 1
            if n == 0:
                ubar = 0.0
                vbar = 0.0
                lam = 0.0
            else:
                ubar = su / n
                vbar = sv / n
                lam = alpha2 * n
            gx = ix[r, c]
            gy = iy[r, c]
            den = lam + gx * gx + gy * gy
            if den <= 0.0:
                continue
            k = (gx * ubar + gy * vbar + it[r, c]) / den
            u[r, c] = ubar - gx * k
            v[r, c] = vbar - gy * k


def _neighbour_sum(a):
    s = np.zeros_like(a)
    s[1:, :] += a[:-1, :]
    s[:-1, :] += a[1:, :]
    s[:, 1:] += a[:, :-1]
    s[:, :-1] += a[:, 1:]
    return s


def _neighbour_count(shape):
    h, w = shape
    n = np.full(shape, 4.0)
    n[0, :] -= 1
    n[-1, :] -= 1
    n[:, 0] -= 1
    n[:, -1] -= 1
    return n


def hs_sweep_np(u, v, ix, iy, it, alpha2, parity):
    h, w = u.shape
    rr, cc = np.indices((h, w))
    mask = (rr + cc) % 2 == parity
    n = _neighbour_count((h, w))
    with np.errstate(invalid="ignore", divide="ignore"):
        ubar = np.where(n > 0, _neighbour_sum(u) / np.maximum(n, 1), 0.0)
        vbar = np.where(n > 0, _neighbour_sum(v) / np.maximum(n, 1), 0.0)
    den = alpha2 * n + ix * ix + iy * iy
    ok = mask & (den > 0)
    k = np.zeros_like(u)
    k[ok] = (ix[ok] * ubar[ok] + iy[ok] * vbar[ok] + it[ok]) / den[ok]
    u[ok] = ubar[ok] - ix[ok] * k[ok]
    v[ok] = vbar[ok] - iy[ok] * k[ok]


@njit(cache=True)
def hs_solve_nb(u, v, ix, iy, it, alpha2, iterations):
    for _ in range(iterations):
        hs_sweep_nb(u, v, ix, iy, it, alpha2, 0)
        hs_sweep_nb(u, v, ix, iy, it, alpha2, 1)


def hs_solve_np(u, v, ix, iy, it, alpha2, iterations):
    for _ in range(iterations):
        hs_sweep_np(u, v, ix, iy, it, alpha2, 0)
        hs_sweep_np(u, v, ix, iy, it, alpha2, 1)


# ---------------------------------------------------------------------------
# Bilinear sampling with replicate-edge clamping
# ---------------------------------------------------------------------------


@njit(cache=True)
def bilinear_sample_nb(img, xs, ys):
    h, w = img.shape
    out = np.empty(xs.shape, dtype=img.dtype)
    flat_x = xs.ravel()
    flat_y = ys.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        x = min(max(flat_x[i], 0.0), w - 1.0)
        y = min(max(flat_y[i], 0.0), h - 1.0)
        x0 = int(np.floor(x))
        y0 = int(np.floor(y))
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
        bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
        flat_o[i] = top * (1.0 - fy) + bot * fy
    return out


def bilinear_sample_np(img, xs, ys):
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return (top * (1.0 - fy) + bot * fy).astype(img.dtype)


# ---------------------------------------------------------------------------
# im2col / col2im for 2-D cross-correlation in channel-major (C, B, H, W) layout
#
# cols[(c, a, e), (n, i, j)] = xp[c, n, i * stride + a, j * stride + e]
# ---------------------------------------------------------------------------


def im2col_np(xp, kh, kw, stride, oh, ow):
    c, b, _, _ = xp.shape
    cols = np.empty((c, kh, kw, b, oh, ow), dtype=xp.dtype)
    for a in range(kh):
        for e in range(kw):
            cols[:, a, e] = xp[:, :, a : a + stride * (oh - 1) + 1 : stride, e : e + stride * (ow - 1) + 1 : stride]
    return cols.reshape(c * kh * kw, b * oh * ow)


def col2im_np(cols, xshape, kh, kw, stride, oh, ow):
    c, b, hp, wp = xshape
    dx = np.zeros((c, b, hp, wp), dtype=cols.dtype)
    g = cols.reshape(c, kh, kw, b, oh, ow)
    for a in range(kh):
        for e in range(kw):
            dx[:, :, a : a + stride * (oh - 1) + 1 : stride, e : e + stride * (ow - 1) + 1 : stride] += g[:, a, e]
    return dx


# ---------------------------------------------------------------------------
# 2x2 / stride 2 max pooling over the last two axes; ties go to the lowest
# window index
# ---------------------------------------------------------------------------


@njit(cache=True)
def maxpool2_nb(x):
    b, c, h, w = x.shape
    oh = h // 2
    ow = w // 2
    out = np.empty((b, c, oh, ow), dtype=x.dtype)
    arg = np.empty((b, c, oh, ow), dtype=np.int8)
    for n in range(b):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = x[n, ch, 2 * i, 2 * j]
                    k = 0
                    for q in range(1, 4):
                        val = x[n, ch, 2 * i + q // 2, 2 * j + q % 2]
                        if val > best:
                            best = val
                            k = q
                    out[n, ch, i, j] = best
                    arg[n, ch, i, j] = k
    return out, arg


def maxpool2_np(x):
    b, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    win = x[:, :, : 2 * oh, : 2 * ow].reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, oh, ow, 4)
    arg = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


@njit(cache=True)
def maxpool2_backward_nb(dout, arg, h, w):
    b, c, oh, ow = dout.shape
    dx = np.zeros((b, c, h, w), dtype=dout.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    k = arg[n, ch, i, j]
                    dx[n, ch, 2 * i + k // 2, 2 * j + k % 2] = dout[n, ch, i, j]
    return dx


def maxpool2_backward_np(dout, arg, h, w):
    b, c, oh, ow = dout.shape
    onehot = (arg[..., None] == np.arange(4, dtype=np.int8)).astype(dout.dtype)
    g = (onehot * dout[..., None]).reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros((b, c, h, w), dtype=dout.dtype)
    dx[:, :, : 2 * oh, : 2 * ow] = g.reshape(b, c, 2 * oh, 2 * ow)
    return dx


if USE_NUMBA:
    hs_sweep = hs_sweep_nb
    hs_solve = hs_solve_nb
    bilinear_sample = bilinear_sample_nb
    maxpool2 = maxpool2_nb
    maxpool2_backward = maxpool2_backward_nb
else:
    hs_sweep = hs_sweep_np
    hs_solve = hs_solve_np
    bilinear_sample = bilinear_sample_np
    maxpool2 = maxpool2_np
    maxpool2_backward = maxpool2_backward_np

# numpy strided block copies measured faster than compiled loops for these two
im2col = im2col_np
col2im = col2im_np

BACKEND = "numba" if USE_NUMBA else "numpy"
