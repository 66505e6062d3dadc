"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, stream, block)``.  Trials are processed in fixed-size
blocks, so the numbers a trial sees do not depend on how many workers run or
in which order blocks finish.
"""
import os
from dataclasses import dataclass

import numpy as np

#: trials per RNG block; changing it changes every sampled path
BLOCK_SIZE = 512

WORKERS_ENV = "COLOREDSHE_WORKERS"


@dataclass(frozen=True)
class RngSpec:
    """A reproducible random stream.

    Parameters
    ----------
    seed : int
        Experiment seed (64-bit).
    stream : int
        Sub-stream counter.  Distinct streams are statistically independent.
    """

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not (0 <= int(value) < 2**64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self, block=0):
        """Return a fresh generator for trial block ``block``."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(block)))
        key = ss.generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, offset):
        """Derive an independent stream, e.g. one per (epsilon, T) cell."""
        return RngSpec(self.seed, (int(self.stream) * 1_000_003 + int(offset) + 1) % 2**64)


def trial_blocks(trials, block_size=BLOCK_SIZE):
    """Split ``trials`` into ``(block_index, start, stop)`` triples."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return [(b, s, min(s + block_size, trials))
            for b, s in enumerate(range(0, trials, block_size))]


def worker_count(default=None):
    """Number of worker threads, from the environment or ``os.cpu_count``."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    if default is not None:
        return max(1, int(default))
    return os.cpu_count() or 1


def map_blocks(func, blocks, workers=None):
    """Apply ``func`` to every block, in parallel threads when useful.

    Results come back in block order, so any reduction over them is
    independent of scheduling.
    """
    workers = worker_count(workers)
    if workers == 1 or len(blocks) == 1:
        return [func(b) for b in blocks]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, blocks))
