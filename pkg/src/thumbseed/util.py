"""Seed-stream helpers: all randomness fans out from one integer seed."""

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream_rng(seed: int, *names: str, index: int | None = None) -> np.random.Generator:
    """Named RNG sub-stream, reproducible across runs and platforms."""
    entropy = [int(seed)] + [stream_key(n) for n in names]
    if index is not None:
        entropy.append(int(index))
    return np.random.default_rng(tuple(entropy))
