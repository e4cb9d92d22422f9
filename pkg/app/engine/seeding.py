"""
Seed derivation for every stochastic stage

All randomness flows from one root seed. A stage asks for
``derive_seed(root, "init", layer)``; each label is hashed with CRC32 into
the SeedSequence spawn key, so introducing a new stage never shifts the
stream of an existing one. Generators are numpy PCG64, whose output stream
is fixed across platforms for a given SeedSequence.
"""

import zlib
from typing import Union

import numpy as np

Label = Union[str, int]


def _label_key(label: Label) -> int:
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(root: int, *labels: Label) -> int:
    """Derive a 63-bit child seed from a root seed and a label path"""
    sequence = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(_label_key(l) for l in labels))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
