"""Deterministic RNG stream derivation.

All randomness in the package flows through torch.Generator objects seeded
from a master seed plus a tag path, so any (image, block, link) triple gets
its own reproducible stream and no call site touches global RNG state.
"""

import hashlib

import torch

_SEED_MASK = (1 << 63) - 1


def derive_seed(master: int, *tags) -> int:
    """Derive a child seed from `master` and a path of int/str tags.

    Stable across processes and platforms (unlike built-in hash()).
    """
    payload = repr((int(master),) + tuple(tags)).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") & _SEED_MASK


def generator(seed: int) -> torch.Generator:
    g = torch.Generator(device="cpu")
    g.manual_seed(int(seed) & _SEED_MASK)
    return g


def derived_generator(master: int, *tags) -> torch.Generator:
    return generator(derive_seed(master, *tags))
