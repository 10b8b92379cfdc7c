"""Counter-based random streams.

Every random draw in the simulator is a pure function of
``(seed, domain tag, replication, index, counter)``.  A stream key is
derived by chaining the SplitMix64 finalizer over the first four
components::

    h = mix64(seed)
    h = mix64((h ^ tag) + GOLDEN)
    h = mix64((h ^ rep) + GOLDEN)
    key = mix64((h ^ index) + GOLDEN)

and the ``c``-th uniform of a stream is the top 53 bits of
``mix64(key + (c + 1) * GOLDEN)`` scaled to ``[0, 1)``.  All arithmetic is
modulo 2**64.  The same functions exist twice: in plain Python (here) and
as numba kernels (``adwalk._engine``); tests pin them to each other.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

# Domain tags.
TAG_XI = 1  # per-user page-transition noise (and session start page)
TAG_ARRIVAL = 2  # per-user arrival coins
TAG_ZETA = 3  # per-advertiser replenishment noise
TAG_ASSIGN = 4  # user-to-arm randomization


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, tag: int, rep: int, index: int) -> int:
    h = mix64(seed)
    for part in (tag, rep, index):
        h = mix64(((h ^ (part & MASK64)) + GOLDEN) & MASK64)
    return h


def uniform(key: int, counter: int) -> float:
    z = mix64((key + (counter + 1) * GOLDEN) & MASK64)
    return (z >> 11) * 2.0**-53


def derive_seed(seed: int, label: str) -> int:
    """Sub-seed for a named domain (FNV-1a of the label folded into the seed)."""
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return mix64((mix64(seed) ^ h) + GOLDEN)


class Streams:
    """Stream keys for one replication of a world with ``d`` users and ``m`` advertisers."""

    def __init__(self, seed: int, rep: int, d: int, m: int):
        self.seed = int(seed)
        self.rep = int(rep)
        self.xi = _keys(self.seed, TAG_XI, self.rep, d)
        self.arrival = _keys(self.seed, TAG_ARRIVAL, self.rep, d)
        self.zeta = _keys(self.seed, TAG_ZETA, self.rep, m)

    def __repr__(self) -> str:
        return f"Streams(seed={self.seed}, rep={self.rep})"


def _keys(seed: int, tag: int, rep: int, n: int) -> np.ndarray:
    return np.array([stream_key(seed, tag, rep, i) for i in range(n)], dtype=np.uint64)


# numba twins -----------------------------------------------------------------

_G = np.uint64(GOLDEN)
_M1 = np.uint64(_MUL1)
_M2 = np.uint64(_MUL2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


@njit(cache=True)
def nb_mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def nb_uniform(key, counter):
    z = nb_mix64(key + (np.uint64(counter) + _ONE) * _G)
    return float(z >> _S11) * 1.1102230246251565e-16


@njit(cache=True)
def nb_stream_key(seed, tag, rep, index):
    h = nb_mix64(np.uint64(seed))
    h = nb_mix64((h ^ np.uint64(tag)) + _G)
    h = nb_mix64((h ^ np.uint64(rep)) + _G)
    return nb_mix64((h ^ np.uint64(index)) + _G)
