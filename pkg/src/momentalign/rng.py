"""Seeded random number generation.

All randomness flows through numpy's PCG64 bit generator, whose output stream
is specified and identical across platforms for a given 64-bit seed.
"""

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


def derive_seed(seed: int, *labels) -> int:
    """Stable 64-bit sub-seed for ``(seed, labels...)``, independent of call order."""
    text = "\x1f".join([str(int(seed) & SEED_MASK), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bitgen = np.random.PCG64()
    bitgen.state = state
    return np.random.Generator(bitgen)
