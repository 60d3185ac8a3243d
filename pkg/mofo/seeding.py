"""Named sub-seeds and portable random generators."""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, tag: str) -> int:
    """Stage seed: the global seed XOR a stable 64-bit hash of the stage tag."""
    digest = hashlib.blake2b(tag.encode('utf-8'), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, 'little')) & _MASK64


def numpy_rng(seed: int, tag: str = '') -> np.random.Generator:
    """PCG64 generator; identical streams on every platform for a given seed."""
    value = derive_seed(seed, tag) if tag else int(seed) & _MASK64
    return np.random.Generator(np.random.PCG64(value))
