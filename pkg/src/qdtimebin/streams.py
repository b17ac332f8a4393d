"""Named, reproducible random substreams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *keys)``.

    Components draw from their own named stream so any of them can be re-run
    in isolation and reproduce the same numbers.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_key(name), *map(int, keys)))
    return np.random.default_rng(ss)
