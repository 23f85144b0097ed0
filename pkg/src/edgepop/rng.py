"""Splittable, path-keyed random streams.

A stream is identified by ``(seed, path)``. Forking appends a label to the
path, so the draws for ``layer3/weights`` do not depend on how many other
layers were initialized first.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """Deterministic random stream keyed by a seed and a label path."""

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        seq = np.random.SeedSequence(self.seed, spawn_key=tuple(_label_key(p) for p in self.path))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def fork(self, label: str) -> "RngStream":
        return RngStream(self.seed, self.path + (label,))

    def normal(self, size, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path)!r})"


def rng_fork(parent: RngStream, label: str) -> RngStream:
    return parent.fork(label)
