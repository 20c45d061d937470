"""Dense optical flow and its colour encoding (GCMP images).

Flow is estimated with coarse-to-fine Horn-Schunck. At every pyramid level the
second frame is warped by the current estimate, the brightness constancy
constraint is linearised around it, and the resulting quadratic energy

    E(u, v) = sum (Ix u + Iy v + It')^2 + alpha^2 sum_{4-nbr edges} |du|^2 + |dv|^2

is minimised by red-black Gauss-Seidel sweeps. Each half-sweep is an exact
block minimisation, so E never increases within a linearisation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .imageio import area_downsample, resize_bilinear, to_gray


@dataclass(frozen=True)
class FlowConfig:
    alpha: float = 0.1
    iterations: int = 30
    warps: int = 1
    levels: int | None = None
    presmooth: float = 1.0
    # per-clip normalisation ("clip"), per-frame ("frame") or a fixed constant ("global")
    norm_mode: str = "clip"
    norm_value: float = 4.0
    min_norm: float = 1.0
    check_energy: bool = False

    def n_levels(self, h, w):
        if self.levels is not None:
            return self.levels
        return int(min(5, max(3, int(math.log2(min(h, w) / 8)) + 1)))


@dataclass
class FlowField:
    """Per-pixel displacement (u right, v down) in pixels per frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be equal-shape 2-D arrays")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("flow field must be finite")

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    def magnitude(self):
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


class EnergyIncreaseError(RuntimeError):
    pass


def _derivatives(i1, i2w):
    avg = 0.5 * (i1 + i2w)
    p = np.pad(avg, 1, mode="edge")
    ix = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    iy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return ix, iy, i2w - i1


def hs_energy(u, v, ix, iy, it, alpha2):
    """Horn-Schunck energy: data term plus alpha^2-weighted smoothness."""
    data = np.sum((ix * u + iy * v + it) ** 2)
    smooth = (
        np.sum(np.diff(u, axis=0) ** 2)
        + np.sum(np.diff(u, axis=1) ** 2)
        + np.sum(np.diff(v, axis=0) ** 2)
        + np.sum(np.diff(v, axis=1) ** 2)
    )
    return float(data + alpha2 * smooth)


def warp(img, u, v):
    """Sample ``img`` at (x + u, y + v) with bilinear interpolation."""
    h, w = img.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    return kernels.bilinear_sample(np.ascontiguousarray(img), gx + u, gy + v)


def _solve_level(i1, i2, u, v, cfg, trace):
    alpha2 = cfg.alpha**2
    for _ in range(cfg.warps):
        ix, iy, it = _derivatives(i1, warp(i2, u, v))
        # linearise around (u, v): Ix(u' - u) + Iy(v' - v) + It
        it_lin = it - ix * u - iy * v
        if not (cfg.check_energy or trace is not None):
            kernels.hs_solve(u, v, ix, iy, it_lin, alpha2, cfg.iterations)
            continue
        energies = [hs_energy(u, v, ix, iy, it_lin, alpha2)]
        for _ in range(cfg.iterations):
            kernels.hs_sweep(u, v, ix, iy, it_lin, alpha2, 0)
            kernels.hs_sweep(u, v, ix, iy, it_lin, alpha2, 1)
            e = hs_energy(u, v, ix, iy, it_lin, alpha2)
            if cfg.check_energy and e > energies[-1] * (1 + 1e-12) + 1e-15:
                raise EnergyIncreaseError(f"energy rose from {energies[-1]!r} to {e!r}")
            energies.append(e)
        if trace is not None:
            trace.append(np.array(energies))
    return u, v


def compute_flow(frame_a, frame_b, cfg=FlowConfig(), trace=None):
    """Flow from ``frame_a`` to ``frame_b`` (grayscale or RGB arrays).

    If ``trace`` is a list, one array of per-iteration energies is appended
    for every (level, warp) linearisation, coarse to fine.
    """
    a = to_gray(frame_a) / 255.0
    b = to_gray(frame_b) / 255.0
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < 16 or w < 16:
        raise ValueError("frames must be at least 16x16")
    if cfg.presmooth > 0:
        a = gaussian_filter(a, cfg.presmooth, mode="nearest")
        b = gaussian_filter(b, cfg.presmooth, mode="nearest")
    pyr = [(a, b)]
    for _ in range(cfg.n_levels(h, w) - 1):
        pa, pb = pyr[-1]
        pyr.append((area_downsample(pa, 2), area_downsample(pb, 2)))
    u = np.zeros(pyr[-1][0].shape)
    v = np.zeros_like(u)
    for lvl in range(len(pyr) - 1, -1, -1):
        i1, i2 = pyr[lvl]
        if u.shape != i1.shape:
            sy = i1.shape[0] / u.shape[0]
            sx = i1.shape[1] / u.shape[1]
            u = resize_bilinear(u, *i1.shape) * sx
            v = resize_bilinear(v, *i1.shape) * sy
        u = np.ascontiguousarray(u, dtype=np.float64)
        v = np.ascontiguousarray(v, dtype=np.float64)
        u, v = _solve_level(i1, i2, u, v, cfg, trace)
    return FlowField(u, v)


# ---------------------------------------------------------------------------
# colour encoding
# ---------------------------------------------------------------------------


def make_color_wheel():
    """Middlebury colour wheel: 55 RGB entries, red -> yellow -> ... -> magenta."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[0:ry, 0] = 255
    wheel[0:ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel


COLOR_WHEEL = make_color_wheel()


def colorize_flow(flow, norm):
    """Encode a flow field as an HxWx3 uint8 GCMP image.

    Hue follows the flow direction on the Middlebury wheel; saturation is
    ``magnitude / norm`` clamped to 1, so zero motion is white.
    """
    if not norm > 0:
        raise ValueError("norm must be positive")
    u = flow.u.astype(np.float64) / norm
    v = flow.v.astype(np.float64) / norm
    rad = np.minimum(np.hypot(u, v), 1.0)
    # + 0.0 turns -0.0 into 0.0 so a purely horizontal flow is not split across the seam
    ang = np.arctan2(-v + 0.0, -u + 0.0) / np.pi
    ncols = COLOR_WHEEL.shape[0]
    fk = (ang + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = ((1 - f) * COLOR_WHEEL[k0] + f * COLOR_WHEEL[k1]) / 255.0
    col = 1 - rad[..., None] * (1 - col)
    return np.clip(np.floor(255 * col), 0, 255).astype(np.uint8)


def flow_fields(frames, cfg=FlowConfig()):
    """Flow for each consecutive pair: T+1 frames give T fields."""
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    return [compute_flow(frames[i], frames[i + 1], cfg) for i in range(len(frames) - 1)]


def colorize_sequence(fields, cfg=FlowConfig()):
    if cfg.norm_mode == "clip":
        peak = max(float(f.magnitude().max()) for f in fields)
        norms = [max(peak, cfg.min_norm)] * len(fields)
    elif cfg.norm_mode == "frame":
        norms = [max(float(f.magnitude().max()), cfg.min_norm) for f in fields]
    elif cfg.norm_mode == "global":
        norms = [cfg.norm_value] * len(fields)
    else:
        raise ValueError(f"unknown norm_mode {cfg.norm_mode!r}")
    norms = [n if n > 0 else 1.0 for n in norms]
    return [colorize_flow(f, n) for f, n in zip(fields, norms)]


def flow_sequence(frames, cfg=FlowConfig()):
    """GCMP images for a clip of T+1 frames (T images)."""
    return colorize_sequence(flow_fields(frames, cfg), cfg)


# ---------------------------------------------------------------------------
# raw dump
# ---------------------------------------------------------------------------


def write_flo(path, flow):
    with open(path, "wb") as fh:
        fh.write(b"FLO1")
        fh.write(struct.pack("<II", flow.width, flow.height))
        fh.write(np.stack([flow.u, flow.v], axis=-1).astype("<f4").tobytes())


def read_flo(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != b"FLO1":
        raise ValueError(f"{path}: bad magic")
    w, h = struct.unpack_from("<II", blob, 4)
    data = np.frombuffer(blob[12:], dtype="<f4")
    if data.size != w * h * 2:
        raise ValueError(f"{path}: size mismatch")
    data = data.reshape(h, w, 2)
    return FlowField(data[..., 0], data[..., 1])
