"""Flat ``key = value`` configuration and named random streams."""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np


def substream(seed, name, *extra):
    """Independent generator for the named sub-stream of ``seed``."""
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")
    return np.random.default_rng([int(seed), tag, *[int(e) for e in extra]])


def read_kv(path):
    """Parse a flat key-value file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def write_kv(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {format_value(v)}\n")


def format_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(text, current):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if current is None:
        return None if text.lower() == "none" else int(text)
    return text


def apply_overrides(obj, values, prefix=""):
    """Return a copy of dataclass ``obj`` with matching keys replaced.

    Keys are matched as ``prefix + field_name``; unknown keys are ignored so
    one file can carry settings for several components.
    """
    changes = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        if key in values:
            changes[f.name] = _coerce(str(values[key]), getattr(obj, f.name))
    return dataclasses.replace(obj, **changes) if changes else obj


def snapshot(obj, prefix=""):
    return {prefix + f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
