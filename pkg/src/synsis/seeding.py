"""Deterministic seed derivation: one root seed, stable sub-seeds per subsystem."""

import hashlib

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def derive_seed(root_seed: int, *tags) -> int:
    """Derive a 64-bit seed from a root seed and a tag path.

    Stable across processes and platforms (no salted hashing), so every
    random draw in a run is a pure function of (root seed, subsystem, step).
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little") & _MASK64


def numpy_rng(root_seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *tags))


def torch_generator(root_seed: int, *tags) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root_seed, *tags) & ((1 << 63) - 1))
    return gen
