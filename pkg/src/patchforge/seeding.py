"""Deterministic RNG derivation.

One root seed fans out into independent substreams keyed by integer paths
(image index, injection index, ...). Streams depend only on the key, never
on processing order, so parallel and sequential runs produce identical
results. Generators are PCG64 seeded through numpy's SeedSequence.
"""

from __future__ import annotations

import numpy as np


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream at ``path`` under ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(path)))


def seed_spec(root_seed: int, *path: int) -> dict:
    """Serializable description of a substream, for export files."""
    return {"entropy": root_seed, "spawn_key": list(path)}


def rng_from_spec(spec: dict) -> np.random.Generator:
    return substream(spec["entropy"], *spec["spawn_key"])
