"""Deterministic derivation of per-stage seeds from a master seed."""

import zlib

import numpy as np


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Mix ``(master, stage, index)`` into a 63-bit seed.

    The mix goes through :class:`numpy.random.SeedSequence`, so nearby
    master seeds give unrelated stage seeds.
    """
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stage.encode()), int(index)]
    lo, hi = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & 0x7FFFFFFFFFFFFFFF
