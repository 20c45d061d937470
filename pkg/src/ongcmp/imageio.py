"""Frame I/O and small image utilities."""

import os

import numpy as np

from . import kernels

LUMA = np.array([0.299, 0.587, 0.114])


def write_ppm(path, img):
    """Write an HxWx3 uint8 array as binary PPM (P6)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("PPM output needs an HxWx3 uint8 array")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _ppm_tokens(blob, count):
    tokens = []
    pos = 2
    while len(tokens) < count:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(int(blob[start:pos]))
    return tokens, pos + 1


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    (w, h, maxval), off = _ppm_tokens(blob, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    data = np.frombuffer(blob[off : off + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3).copy()


def read_image(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, img):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        write_ppm(path, img)
        return
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def write_pgm(path, img):
    """Write an HxW uint8 array as binary PGM (P5)."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def to_gray(img):
    """ITU-R 601 luma of an RGB image as float64 in [0, 255]."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    return img[..., :3].astype(np.float64) @ LUMA


def resize_bilinear(img, height, width):
    """Bilinear resize with half-pixel centres and edge replication.

    Works on HxW or HxWxC arrays; returns float64.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    if img.ndim == 2:
        return kernels.bilinear_sample(np.ascontiguousarray(img), gx, gy)
    return np.stack(
        [kernels.bilinear_sample(np.ascontiguousarray(img[..., k]), gx, gy) for k in range(img.shape[2])],
        axis=-1,
    )


def area_downsample(img, factor):
    """Mean over ``factor``x``factor`` blocks of an HxW(xC) image."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h % factor or w % factor:
        return resize_bilinear(img, h // factor, w // factor)
    shape = (h // factor, factor, w // factor, factor) + img.shape[2:]
    return img.reshape(shape).mean(axis=(1, 3))
