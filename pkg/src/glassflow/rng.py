"""Named counter-based random streams.

Every draw comes from a Philox generator keyed by ``(seed, component,
index)``. Jobs that run in parallel therefore never share or perturb one
another's streams.
"""
from __future__ import annotations

import zlib

import numpy as np

COMPONENTS = ("couplings", "init", "sim", "flow", "resample", "grid", "gauss", "probe")


def component_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(seed: int, component: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(component_id(component), int(index)))


def stream(seed: int, component: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, component, index) triple."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, component, index)))
