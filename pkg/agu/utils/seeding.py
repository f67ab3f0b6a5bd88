"""Named sub-seeds derived from a single run seed."""
import hashlib

import numpy as np
import torch

_SEED_BITS = 63


def derive_seed(base: int, *names: object) -> int:
    """
    Derive a reproducible sub-seed from a base seed and a sequence of names.

    derive_seed(7, "probe", 0) always yields the same value, and distinct name
    sequences yield independent streams.
    """
    digest = hashlib.sha256(repr((int(base),) + tuple(str(n) for n in names)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << _SEED_BITS) - 1)


def torch_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def numpy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))
