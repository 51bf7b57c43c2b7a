"""Hierarchical deterministic random streams.

A run seed spawns substreams keyed by integer paths such as
``(DOMAIN_TRAIN, epoch, batch, module)`` or ``(DOMAIN_MC, pass, module)``.
The same path always yields the same stream, independent of evaluation order,
so parallel or reordered execution cannot change any draw.
"""

import numpy as np

DOMAIN_TRAIN = 0
DOMAIN_MC = 1
DOMAIN_DEVICE = 2
DOMAIN_SHUFFLE = 3
DOMAIN_INIT = 4
DOMAIN_DATA = 5
DOMAIN_EVAL = 6


class SeedTree:
    __slots__ = ("seed", "path")

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(k) for k in path)

    def child(self, *keys):
        return SeedTree(self.seed, self.path + keys)

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"SeedTree({self.seed}, {self.path})"


class CountingGenerator:
    """Wraps a numpy Generator and counts the variates it hands out."""

    def __init__(self, gen, counter=None):
        self.gen = gen
        self.draws = 0
        self.counter = counter

    def _count(self, size):
        n = 1 if size is None else int(np.prod(size))
        self.draws += n
        if self.counter is not None:
            self.counter.rng_bits += n
        return n

    def random(self, size=None):
        self._count(size)
        return self.gen.random(size)

    def standard_normal(self, size=None):
        self._count(size)
        return self.gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        self._count(size)
        return self.gen.integers(low, high, size=size)


def as_generator(rng):
    """Accept a SeedTree, Generator, CountingGenerator, int seed or None."""
    if isinstance(rng, SeedTree):
        return rng.generator()
    if isinstance(rng, (np.random.Generator, CountingGenerator)):
        return rng
    return np.random.default_rng(rng)
