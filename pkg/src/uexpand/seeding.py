"""Deterministic stream derivation.

Every stochastic consumer gets its generator from ``(master_seed, label,
*indices)`` so results never depend on scheduling or worker count.
"""
import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def derive_rng(seed: int, label: str, *indices: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(label_key(label), *map(int, indices)))
    return np.random.default_rng(ss)
