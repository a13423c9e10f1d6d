# -*- coding: utf-8 -*-
"""
Counter-based random streams.

Every stream is a numpy Philox generator keyed by
blake2b(master_seed | purpose tag | cell index...), so any component can
reproduce its own stream without knowing how other cells were scheduled.
"""
import hashlib
import numpy as np


RNG_ALGORITHM = "numpy.Philox4x64-10/blake2b-128"


def derive_seed(master_seed: int, tag: str, *cell) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(master_seed).to_bytes(8, "little", signed=False))
    h.update(b"\x1f" + tag.encode("utf-8"))
    for part in cell:
        h.update(b"\x1f" + str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def derive_rng(master_seed: int, tag: str, *cell) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(master_seed, tag, *cell)))


def derive_int_seed(master_seed: int, tag: str, *cell) -> int:
    """64-bit child seed, for configs that carry a plain integer seed"""
    return derive_seed(master_seed, tag, *cell) & (2**64 - 1)
