"""Counter-based random streams.

Every random word is a pure function of ``(key, counter)``, where the key is
derived from ``(master_seed, trajectory, purpose)``.  Nothing depends on the
order in which trajectories are executed or on how many workers run them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# purpose tags
STEP = 1
INIT = 2
AUX = 3

PURPOSES = {"step": STEP, "init": INIT, "aux": AUX}


@njit(cache=True, inline="always")
def mix64(z):
    # SplitMix64 finalizer
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def derive_key(master_seed, trajectory, purpose):
    k = mix64(np.uint64(master_seed) + GOLDEN)
    k = mix64(k ^ (np.uint64(trajectory) * GOLDEN + np.uint64(1)))
    return mix64(k ^ (np.uint64(purpose) * np.uint64(0xD1B54A32D192ED03)))


@njit(cache=True, inline="always")
def random_word(key, counter):
    return mix64(key ^ mix64(np.uint64(counter) + GOLDEN))


@njit(cache=True)
def _fill_uniform(key, start, out):
    scale = 1.0 / 9007199254740992.0
    for i in range(out.shape[0]):
        out[i] = (random_word(key, start + i) >> np.uint64(11)) * scale


@dataclass
class RngStream:
    """A reproducible stream identified by ``(master_seed, trajectory, purpose)``.

    Confined to one worker; the counter advances with each draw.
    """

    master_seed: int
    trajectory: int = 0
    purpose: int | str = STEP
    counter: int = field(default=0)

    def __post_init__(self):
        if isinstance(self.purpose, str):
            self.purpose = PURPOSES[self.purpose]
        self.master_seed &= MASK64
        self.key = np.uint64(derive_key(np.uint64(self.master_seed), self.trajectory, self.purpose))

    def uniform01(self) -> float:
        return float(self.uniform(1)[0])

    def uniform(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        _fill_uniform(self.key, self.counter, out)
        self.counter += size
        return out

    def word(self, counter: int) -> int:
        """Raw 64-bit word at an absolute counter (does not advance)."""
        return int(random_word(self.key, counter))
