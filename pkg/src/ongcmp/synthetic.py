"""Seeded synthetic basketball-event clips.

Each clip shows a textured court seen through a moving camera with two teams
of dot players and a ball. The event class sets the camera pan and the
collective player motion of each stage:

* event-occ motion is class specific, except that Layup and OtherTwoPoint
  share the same occ motion;
* pre-event motion separates Layup (fast break, camera pans) from every
  other class (static camera, players milling about);
* the outcome changes nothing but where the players stand during the
  post-event stage: bunched around the basket for Success, spread over the
  far half for Failure.

Court, team and ball colours are drawn per clip, so raw pixels carry nuisance
variation that the motion representation does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .config import substream
from .dataset import (
    BASES,
    POST_LEN,
    PRE_LEN,
    ClipManifest,
    DatasetError,
    EventLabel,
    ManifestRecord,
    VideoClip,
)

N_PLAYERS = 8
WORLD = 256


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 6
    per_class: int = 20
    test_per_class: int | None = None
    size: int = 64
    frames: int = 60
    seed: int = 0
    fps: float = 25.0

    def n_test(self):
        if self.test_per_class is not None:
            return self.test_per_class
        return int(round(self.per_class / 6))

    def validate(self):
        if not 1 <= self.classes <= len(BASES):
            raise DatasetError(f"classes must be in 1..{len(BASES)}")
        if self.per_class < 1:
            raise DatasetError("per_class must be positive")
        if not 0 <= self.n_test() <= self.per_class:
            raise DatasetError("test_per_class must be within 0..per_class")
        if self.size < 16:
            raise DatasetError("size must be at least 16")
        if self.frames <= PRE_LEN + POST_LEN:
            raise DatasetError(f"frames must exceed {PRE_LEN + POST_LEN}")


# (camera velocity, player mode, player speed) per stage; velocities in px/frame
# in view coordinates where +x is right and +y is down.
OCC_MOTION = {
    "ThreePoint": ((-1.0, 0.0), "diverge", 0.8),
    "FreeThrow": ((0.0, 0.0), "still", 0.0),
    "Layup": ((0.0, -1.2), "converge", 0.9),
    "OtherTwoPoint": ((0.0, -1.2), "converge", 0.9),
    "SlamDunk": ((1.1, 1.1), "converge", 1.2),
    "Steal": ((2.0, 0.0), "run", 2.4),
}
PRE_LAYUP = ((1.6, 0.0), "run", 2.0)
PRE_OTHER = ((0.0, 0.0), "mill", 0.5)


def _random_color(rng, lo=0.0, hi=1.0):
    import colorsys

    h = rng.random()
    s = rng.uniform(0.3, 0.9)
    v = rng.uniform(lo, hi)
    return np.array(colorsys.hsv_to_rgb(h, s, v)) * 255.0


def _court(rng, base):
    tex = gaussian_filter(rng.standard_normal((WORLD, WORLD)), 3.0, mode="wrap")
    tex /= tex.std() + 1e-12
    fine = gaussian_filter(rng.standard_normal((WORLD, WORLD)), 1.2, mode="wrap")
    fine /= fine.std() + 1e-12
    shade = 1.0 + 0.22 * tex + 0.08 * fine
    court = base[None, None, :] * shade[..., None]
    line = _random_color(rng, 0.7, 1.0)
    for _ in range(6):
        if rng.random() < 0.5:
            r = int(rng.integers(0, WORLD - 2))
            court[r : r + 2, :] = line
        else:
            c = int(rng.integers(0, WORLD - 2))
            court[:, c : c + 2] = line
    return np.clip(court, 0, 255)


def _sample_view(world, cx, cy, size):
    gy, gx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.empty((size, size, 3))
    for k in range(3):
        out[..., k] = kernels.bilinear_sample(np.ascontiguousarray(world[..., k]), gx + cx, gy + cy)
    return out


def _draw_disc(img, x, y, radius, color):
    size = img.shape[0]
    x0, x1 = int(max(np.floor(x - radius - 1), 0)), int(min(np.ceil(x + radius + 1), size - 1))
    y0, y1 = int(max(np.floor(y - radius - 1), 0)), int(min(np.ceil(y + radius + 1), size - 1))
    if x0 > x1 or y0 > y1:
        return
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    d = np.hypot(xx - x, yy - y)
    a = np.clip(radius + 0.5 - d, 0.0, 1.0)[..., None]
    img[y0 : y1 + 1, x0 : x1 + 1] = (1 - a) * img[y0 : y1 + 1, x0 : x1 + 1] + a * color


def _player_velocity(mode, speed, pos, centre, heading, rng):
    if mode == "still":
        return rng.normal(0.0, 0.05, pos.shape)
    if mode == "mill":
        return rng.normal(0.0, speed, pos.shape)
    if mode == "run":
        # the camera follows the break, players pull slightly ahead of it
        d = np.array([np.cos(heading), np.sin(heading)])
        return 0.4 * speed * d[None, :] + rng.normal(0.0, 0.15, pos.shape)
    rel = pos - centre
    norm = np.linalg.norm(rel, axis=1, keepdims=True) + 1e-6
    if mode == "converge":
        return -speed * rel / norm * np.minimum(1.0, norm / 4.0) + rng.normal(0.0, 0.1, pos.shape)
    return speed * rel / norm + rng.normal(0.0, 0.1, pos.shape)


def _jitter(rng, vel, scale=0.2, angle=0.2):
    vx, vy = vel
    s = 1.0 + rng.uniform(-scale, scale)
    a = rng.uniform(-angle, angle)
    ca, sa = np.cos(a), np.sin(a)
    return np.array([s * (ca * vx - sa * vy), s * (sa * vx + ca * vy)])


def render_clip(label, cfg, rng, clip_id):
    """Render one 60-frame (by default) event clip for ``label``."""
    size = cfg.size
    n_occ = cfg.frames - PRE_LEN - POST_LEN
    scale = size / 64.0

    court_rgb = _random_color(rng, 0.35, 0.8)
    world = _court(rng, court_rgb)
    team = [_random_color(rng, 0.05, 1.0), _random_color(rng, 0.05, 1.0)]
    ball_color = _random_color(rng, 0.6, 1.0)
    radius = 2.4 * scale

    stages = [
        (PRE_LAYUP if label.base == "Layup" else PRE_OTHER, PRE_LEN),
        (OCC_MOTION[label.base], n_occ),
    ]
    cam = np.array([WORLD / 2 - size / 2, WORLD / 2 - size / 2]) + rng.uniform(-20, 20, 2)
    pos = rng.uniform(0.2 * size, 0.8 * size, (N_PLAYERS, 2))
    frames = np.empty((cfg.frames, size, size, 3), dtype=np.uint8)
    t = 0
    for (cam_v, mode, speed), length in stages:
        cam_v = _jitter(rng, cam_v) * scale
        speed = speed * scale * (1.0 + rng.uniform(-0.2, 0.2))
        heading = np.arctan2(cam_v[1], cam_v[0]) if np.any(cam_v) else rng.uniform(-np.pi, np.pi)
        centre = rng.uniform(0.35 * size, 0.65 * size, 2)
        for _ in range(length):
            frames[t] = _compose(world, cam, pos, team, ball_color, radius, size, pos.mean(axis=0))
            t += 1
            # player velocities are relative to the view
            pos = pos + _player_velocity(mode, speed, pos, centre, heading, rng)
            cam = cam + cam_v
            pos = np.clip(pos, 2.0, size - 3.0)

    # post-event: static camera, players placed according to the outcome
    success = label.outcome == "Success" or (label.outcome == "NotApplicable" and rng.random() < 0.5)
    basket = np.array([0.78 * size, 0.22 * size])
    if success:
        pos = basket + rng.normal(0.0, 0.07 * size, (N_PLAYERS, 2))
        ball = basket + rng.normal(0.0, 0.02 * size, 2)
    else:
        pos = np.column_stack(
            [rng.uniform(0.08 * size, 0.45 * size, N_PLAYERS), rng.uniform(0.45 * size, 0.92 * size, N_PLAYERS)]
        )
        ball = pos[int(rng.integers(0, N_PLAYERS))] + rng.normal(0.0, 1.0, 2)
    pos = np.clip(pos, 2.0, size - 3.0)
    for _ in range(POST_LEN):
        frames[t] = _compose(world, cam, pos, team, ball_color, radius, size, ball)
        t += 1
        pos = np.clip(pos + rng.normal(0.0, 0.3 * scale, pos.shape), 2.0, size - 3.0)
    return VideoClip(frames, cfg.fps, clip_id)


def _compose(world, cam, pos, team, ball_color, radius, size, ball):
    img = _sample_view(world, cam[0], cam[1], size)
    for i, (x, y) in enumerate(pos):
        _draw_disc(img, x, y, radius, team[i % 2])
    _draw_disc(img, ball[0], ball[1], 0.6 * radius, ball_color)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def class_labels(base, count):
    """Outcome labels for ``count`` clips of ``base``, alternating S/F."""
    if base == "Steal":
        return [EventLabel("Steal", "NotApplicable")] * count
    return [EventLabel(base, ("Success", "Failure")[i % 2]) for i in range(count)]


def gen_synthetic(cfg=SynthConfig()):
    """Generate ``cfg.classes * cfg.per_class`` clips and their manifest.

    Records carry the event-occ interval within each clip, so extending a
    record by the default context reproduces the whole clip.
    """
    cfg.validate()
    n_test = cfg.n_test()
    n_train = cfg.per_class - n_test
    clips, records = [], []
    index = 0
    for base in BASES[: cfg.classes]:
        labels = [("train", lab) for lab in class_labels(base, n_train)]
        labels += [("test", lab) for lab in class_labels(base, n_test)]
        for k, (split, lab) in enumerate(labels):
            cid = f"{base}_{k:04d}"
            # (seed, index) rather than seed ^ index: XOR only permutes clip streams across small seeds
            rng = substream(cfg.seed, "data", index)
            clips.append(render_clip(lab, cfg, rng, cid))
            records.append(ManifestRecord(cid, PRE_LEN, cfg.frames - POST_LEN - 1, lab, split))
            index += 1
    return clips, ClipManifest(records)
