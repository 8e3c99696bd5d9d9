"""Deterministic, splittable random streams.

Every stochastic draw in the engine goes through an :class:`RngStream`.
Streams are derived by *key*, not by draw order, so a child stream produces
the same sequence no matter how many draws its parent has made or which
thread consumes it. That makes whole runs reproducible even when fitness
evaluation fans out over workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(key) -> int:
    """Map a split key (int or short str label) to a uint32 path element."""
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"split keys must be int or str, got {type(key).__name__}")


class RngStream:
    """A PCG64 generator addressed by (seed, key path).

    ``split(*keys)`` derives an independent child stream; the same
    (seed, path) always yields the same stream.
    """

    __slots__ = ("seed", "path", "gen")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_key_part(k) for k in keys))

    # Thin draw helpers so call sites stay short.
    def random(self):
        return float(self.gen.random())

    def uniform(self, low, high, size=None):
        out = self.gen.uniform(low, high, size)
        return float(out) if size is None else out

    def normal(self, loc=0.0, scale=1.0, size=None):
        out = self.gen.normal(loc, scale, size)
        return float(out) if size is None else out

    def integers(self, low, high=None, size=None):
        out = self.gen.integers(low, high, size)
        return int(out) if size is None else out

    def choice(self, seq):
        return seq[int(self.gen.integers(0, len(seq)))]

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"
