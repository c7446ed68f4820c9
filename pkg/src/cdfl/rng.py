"""Deterministic named random streams.

Every stochastic component draws from its own stream derived from the master
seed plus a label path (e.g. ``("training", ev_id, round)``), so enabling or
disabling one feature never perturbs the randomness seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngHub:
    """Factory of independent, reproducible random generators.

    Same (seed, labels) always yields a generator producing the identical
    sequence, across runs and platforms.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, *labels) -> np.random.Generator:
        """Return a fresh generator for the given label path."""
        tag = "/".join(str(x) for x in labels)
        digest = hashlib.sha256(f"{self.seed}|{tag}".encode("utf-8")).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]
        return np.random.default_rng(np.random.SeedSequence(entropy=words))

    def spawn(self, *labels) -> "RngHub":
        """Derive a sub-hub whose streams are all namespaced under ``labels``."""
        tag = "/".join(str(x) for x in labels)
        digest = hashlib.sha256(f"{self.seed}|hub|{tag}".encode("utf-8")).digest()
        return RngHub(int.from_bytes(digest[:8], "little"))
