"""Permanent random connectomes.

A connectome is the fixed wiring between a layer's expanded convolution
channels and its channel-pooling units: a permutation of the ``expansion``
channel indices plus the implied partition into consecutive windows of size
``cmp``.  It is drawn once at layer construction and never changes again --
every forward pass, during training and at test time, observes the same
wiring.  ``randomized=False`` yields the identity permutation (the
no-shuffle ablation).

Pooling supports are therefore disjoint and cover every channel exactly
once: support ``j`` is ``{perm[j*cmp], ..., perm[(j+1)*cmp - 1]}``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .rng import Rng

_FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQQBQ")  # version, expansion, cmp, randomized, seed


class ConnectomeError(ValueError):
    pass


@dataclass(frozen=True)
class Connectome:
    """Immutable channel wiring: permutation of [0, expansion) + cmp windows."""

    expansion: int
    cmp: int
    perm: np.ndarray
    seed: int
    randomized: bool = True

    def __post_init__(self):
        if self.expansion < 1:
            raise ConnectomeError("expansion must be >= 1")
        if self.cmp < 1 or self.expansion % self.cmp != 0:
            raise ConnectomeError(
                f"cmp={self.cmp} must divide expansion={self.expansion}"
            )
        perm = np.asarray(self.perm, dtype=np.int64)
        if perm.shape != (self.expansion,) or not np.array_equal(
            np.sort(perm), np.arange(self.expansion)
        ):
            raise ConnectomeError("perm is not a bijection on [0, expansion)")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    @property
    def n_supports(self) -> int:
        return self.expansion // self.cmp

    def supports(self) -> list[np.ndarray]:
        """Disjoint channel sets pooled by each output slot."""
        return [
            self.perm[j * self.cmp : (j + 1) * self.cmp] for j in range(self.n_supports)
        ]

    def wiring_hash(self) -> str:
        """Digest of the applied index mapping; constant for the lifetime."""
        return hashlib.sha256(self.perm.astype("<i8").tobytes()).hexdigest()


def build(rng: Rng, expansion: int, cmp: int, randomized: bool = True) -> Connectome:
    """Draw the permanent wiring (one permutation, consumed from ``rng``).

    The identity wiring (``randomized=False``) still records the seed but
    consumes no draws.
    """
    seed = rng.seed
    if randomized:
        perm = rng.permutation(expansion)
    else:
        perm = np.arange(expansion, dtype=np.int64)
    return Connectome(expansion=expansion, cmp=cmp, perm=perm, seed=seed,
                      randomized=randomized)


def serialize(c: Connectome) -> bytes:
    """Length-prefixed little-endian encoding (version, E, cmp, flag, seed, perm)."""
    head = _HEADER.pack(_FORMAT_VERSION, c.expansion, c.cmp, int(c.randomized), c.seed)
    return head + c.perm.astype("<u4").tobytes()


def deserialize(blob: bytes) -> Connectome:
    """Inverse of `serialize`; rejects truncation, bad versions and non-bijections."""
    if len(blob) < _HEADER.size:
        raise ConnectomeError(f"payload truncated at {len(blob)} bytes")
    version, expansion, cmp, flag, seed = _HEADER.unpack_from(blob, 0)
    if version != _FORMAT_VERSION:
        raise ConnectomeError(f"unknown connectome format version {version}")
    body = blob[_HEADER.size :]
    if len(body) != 4 * expansion:
        raise ConnectomeError(
            f"expected {4 * expansion} permutation bytes, got {len(body)}"
        )
    perm = np.frombuffer(body, dtype="<u4").astype(np.int64)
    return Connectome(expansion=expansion, cmp=cmp, perm=perm, seed=seed,
                      randomized=bool(flag))
