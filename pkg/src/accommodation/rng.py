"""SplitMix64 random streams.

Every stochastic choice in the package (inventory, trajectories, splits,
initialization, dropout masks, shuffling, probe offsets) draws from a
labelled :class:`RngStream`, so a run is fully determined by its seeds.
Draws are vectorized: the i-th output after state ``s`` only depends on
``s + i * GOLDEN_GAMMA``, which lets numpy produce blocks of outputs that
are identical to calling :func:`splitmix64_next` repeatedly.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once; returns ``(output, new_state)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    return _mix(state), state


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """A named SplitMix64 stream.

    The starting state is ``seed XOR fnv1a64(label)``; two streams with the
    same seed and label produce the same sequence.
    """

    def __init__(self, seed: int, label: str = ""):
        self.label = label
        self.state = (int(seed) ^ fnv1a64(label)) & MASK64 if label else int(seed) & MASK64

    @classmethod
    def from_state(cls, state: int, label: str = "") -> "RngStream":
        stream = cls(0)
        stream.state = state & MASK64
        stream.label = label
        return stream

    def __repr__(self) -> str:
        return f"RngStream(label={self.label!r}, state=0x{self.state:016X})"

    def next_u64(self) -> int:
        out, self.state = splitmix64_next(self.state)
        return out

    def u64(self, n: int) -> np.ndarray:
        """``n`` consecutive raw outputs as a uint64 array."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
            z = np.uint64(self.state) + steps
            out = _mix_array(z)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        """Doubles in [0, 1) as ``(output >> 11) * 2**-53``."""
        if size is None:
            return (self.next_u64() >> 11) * _INV_2_53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def uniform_range(self, lo: float, hi: float, size=None):
        return lo + (hi - lo) * self.uniform(size)

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range ``[lo, hi]``."""
        return lo + int(self.uniform() * (hi - lo + 1))

    def normal(self, size) -> np.ndarray:
        """Standard normals by Box-Muller, consuming two uniforms per value."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * n).reshape(n, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return (radius * np.cos(2.0 * np.pi * u[:, 1])).reshape(shape)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = int(self.uniform() * (i + 1))
            order[i], order[j] = order[j], order[i]
        return order
