"""Deterministic random-stream derivation.

Policy: every random draw in the package flows from one master seed through
``spawn_rng(master, *labels)``. Labels (strings or ints) are hashed with
CRC-32 and appended to the master seed to form a ``numpy.random.SeedSequence``
entropy list, so any sub-task can be replayed in isolation and results do not
depend on scheduling or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(master: int, *labels) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by (master, labels)."""
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(_label_int(lab) for lab in labels)
    return np.random.SeedSequence(entropy)


def spawn_rng(master: int, *labels) -> np.random.Generator:
    """Generator for the stream identified by (master, labels)."""
    return np.random.default_rng(seed_sequence(master, *labels))
