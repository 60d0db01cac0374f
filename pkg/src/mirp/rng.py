"""Counter-based random streams.

Every noise draw is keyed by a tuple of integers (master seed, record,
power index, trial, ...), so results do not depend on evaluation order or
on how work is split across threads.
"""
import hashlib
import struct

import numpy as np


def stream_key(*ids: int) -> int:
    h = hashlib.blake2b(digest_size=16, person=b"mirp-stream")
    for i in ids:
        h.update(struct.pack("<q", int(i)))
    return int.from_bytes(h.digest(), "little")


def stream(*ids: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(*ids)))
