"""Run configuration: ``key = value`` files and named random substreams."""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """Parse a line-oriented ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def format_config(values: dict) -> str:
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def substream_seed(root_seed: int, name: str) -> int:
    """Seed for the named component (ssbr, pairing, translate, phantom) derived from one root."""
    seq = np.random.SeedSequence(int(root_seed), spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def substream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root_seed, name))
