"""Derive independent component seeds from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def _tag(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode())


def child_seed(root: int, *labels) -> int:
    """A 63-bit seed determined by ``root`` and the label path."""
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF] + [_tag(x) for x in labels]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
