"""Binary parameter checkpoints.

Layout::

    b"GCMP" | u16 version | u32 metadata length | metadata (UTF-8) | float32 data

The metadata block has one line per parameter, ``name dim0xdim1x...``, in
declaration order; data follows as little-endian float32 in the same order.
All integers are little-endian.
"""

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"GCMP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, params):
    """Write an ordered mapping of name -> array to ``path``."""
    lines = []
    for name, arr in params.items():
        if any(ch.isspace() for ch in name) or not name:
            raise CheckpointError(f"invalid parameter name {name!r}")
        lines.append(f"{name} {'x'.join(str(d) for d in np.shape(arr))}")
    meta = ("\n".join(lines)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(meta)))
        fh.write(meta)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path):
    """Read a checkpoint back into an ordered dict of float32 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if len(blob) < 10:
        raise CheckpointError(f"{path}: truncated header")
    version, mlen = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 10
    if off + mlen > len(blob):
        raise CheckpointError(f"{path}: metadata truncated")
    try:
        meta = blob[off : off + mlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: metadata is not UTF-8") from exc
    off += mlen
    out = OrderedDict()
    for line in meta.splitlines():
        try:
            name, dims = line.split(" ")
            shape = tuple(int(d) for d in dims.split("x"))
        except ValueError as exc:
            raise CheckpointError(f"{path}: bad metadata line {line!r}") from exc
        n = int(np.prod(shape))
        end = off + 4 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: data for {name} truncated")
        out[name] = np.frombuffer(blob[off:end], dtype="<f4").reshape(shape).astype(np.float32)
        off = end
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def write_sidecar(path, fields):
    """Flat ``key = value`` text file next to a checkpoint."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in fields.items():
            fh.write(f"{k} = {v}\n")


def read_sidecar(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
