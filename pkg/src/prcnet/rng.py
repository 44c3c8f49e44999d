"""Deterministic random number generation.

Everything stochastic in this package (weight init, connectome wiring, data
shuffling, augmentation draws, Monte Carlo sampling) flows through a single
generator so that a 64-bit seed pins down an entire run, bit for bit, on any
platform.

The generator is SplitMix64 (Steele, Lea & Flood's ``splittable`` mixer, the
same one used to seed xoshiro states).  It is counter based: draw number
``i`` (1-indexed) of a stream seeded with ``s`` is ``mix64(s + i * GOLDEN)``
where ``GOLDEN = 0x9E3779B97F4A7C15``.  Because the output is a pure function
of ``(seed, counter)``, scalar and vectorized generation produce the same
stream, and the number of draws consumed by every method is part of its
contract:

* ``u64`` / ``uniform`` / ``randbelow``: one draw per value.
* ``normal``: two draws per value (Box-Muller, cosine branch only).
* ``permutation(n)``: exactly ``n - 1`` draws (Fisher-Yates).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)

# 2**-53; a 53-bit mantissa draw scaled by this lands in [0, 1)
_INV53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    # uint64 arrays wrap silently in numpy; scalars would warn, hence arrays only
    z = (z ^ (z >> np.uint64(30))) * _U64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U64_MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based SplitMix64 stream.

    A stream is owned by exactly one consumer; share randomness by deriving
    child streams with :meth:`spawn`, never by handing the same object to two
    call sites.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    # -- core draws --------------------------------------------------------

    def u64(self) -> int:
        """Next raw 64-bit draw."""
        self.counter += 1
        return mix64((self.seed + self.counter * _GOLDEN) & _MASK)

    def u64_block(self, n: int) -> np.ndarray:
        """Next ``n`` raw draws as a uint64 array (same stream as ``u64``)."""
        if n < 0:
            raise ValueError("block size must be >= 0")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64_vec(np.uint64(self.seed) + idx * _U64_GOLDEN)

    # -- derived distributions ---------------------------------------------

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """One float in [low, high) with 53-bit resolution; one draw."""
        return low + (high - low) * ((self.u64() >> 11) * _INV53)

    def uniform_block(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * _INV53
        return low + (high - low) * u

    def randbelow(self, k: int) -> int:
        """Integer in [0, k); one draw.

        Computed as floor(u * k) from a 53-bit uniform; the selection bias of
        O(k / 2**53) is negligible for the index ranges used here.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        return int(((self.u64() >> 11) * _INV53) * k)

    def randint_block(self, n: int, low: int, high: int) -> np.ndarray:
        """``n`` integers in [low, high] inclusive; one draw each."""
        if high < low:
            raise ValueError("empty integer range")
        u = (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * _INV53
        return low + (u * (high - low + 1)).astype(np.int64)

    def normal(self, size: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """``size`` Gaussian draws via Box-Muller; consumes ``2 * size`` draws.

        Only the cosine branch is kept so consumption stays exactly two
        uniforms per output regardless of ``size`` parity.
        """
        u = self.u64_block(2 * size)
        # (u >> 11) + 1 scaled by 2**-53 lies in (0, 1], keeping log() finite
        u1 = ((u[:size] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
        u2 = (u[size:] >> np.uint64(11)).astype(np.float64) * _INV53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mean + std * z

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of [0, n) by Fisher-Yates; exactly n-1 draws."""
        if n < 1:
            raise ValueError("permutation size must be >= 1")
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def shuffle(self, values: np.ndarray) -> np.ndarray:
        """Return ``values`` reordered by a fresh permutation (n-1 draws)."""
        return values[self.permutation(len(values))]

    # -- stream management ---------------------------------------------------

    def spawn(self, stream_id: int) -> "Rng":
        """Independent child stream; derivation is mix64(seed + mix64(id))."""
        return Rng(mix64((self.seed + mix64(stream_id)) & _MASK))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed:#x}, counter={self.counter})"
