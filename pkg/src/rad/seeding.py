"""Counter-based random substreams.

Every uniform draw is a pure function of ``(seed, step, index, draw)``, so
sampling can be split across workers in any order and still reproduce the
sequential result bit for bit.

The mix, with all arithmetic modulo 2**64::

    fmix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
              return z ^ (z >> 31)

    key(seed, step, index, draw):
        h = fmix(seed + GAMMA)
        h = fmix((h ^ step) + GAMMA)
        h = fmix((h ^ index) + GAMMA)
        h = fmix((h ^ draw) + GAMMA)
        return h

    uniform = (key >> 11) * 2**-53          # in [0, 1)

with ``GAMMA = 0x9E3779B97F4A7C15``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

# draw slots within one episode
DRAW_CONTEXT = 0
DRAW_ACTION = 1


def fmix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix_key(seed, step, index, draw):
    with np.errstate(over="ignore"):
        h = fmix64(np.uint64(int(seed) & _MASK) + GAMMA)
        h = fmix64((h ^ np.uint64(int(step) & _MASK)) + GAMMA)
        h = fmix64((h ^ np.asarray(index, dtype=np.uint64)) + GAMMA)
        h = fmix64((h ^ np.uint64(int(draw) & _MASK)) + GAMMA)
    return h


def uniforms(seed, step, index, draw) -> np.ndarray:
    """Uniform doubles in ``[0, 1)`` for each entry of ``index``."""
    h = mix_key(seed, step, index, draw)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class Stream:
    """The substream family for one ``(seed, step)`` pair."""

    seed: int
    step: int = 0

    def uniforms(self, index, draw) -> np.ndarray:
        return uniforms(self.seed, self.step, np.asarray(index, dtype=np.uint64), draw)

    def at(self, step: int) -> "Stream":
        return Stream(self.seed, step)
