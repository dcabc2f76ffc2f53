"""Counter-based pseudo-random streams with stable cross-platform output.

The generator is the SplitMix64 sequence: a 64-bit state advances by a fixed
odd constant and each output is the mixed state.  Because the state is just
``start + k * GOLDEN``, any number of independent streams can be derived
arithmetically from (seed, streamId) without coordination, and replica
results merge independently of scheduling order.

Every simulation kernel in this package, pure Python and compiled alike,
draws through exactly this contract, in this order:

* ``u64``        -- advance once, return the 64-bit mix.
* ``randbelow``  -- one ``u64``; value is the high part of a 128-bit product.
* ``double53``   -- one ``u64``; top 53 bits scaled to [0, 1).
* ``poisson``    -- repeated ``double53`` by cumulative-product inversion.

Identical (seed, streamId) therefore gives bit-identical draws from either
kernel implementation on the same platform.
"""

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a 64-bit bijection with good avalanche."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def fnv1a64(data: bytes, state: int = _FNV_OFFSET) -> int:
    """FNV-1a over ``data``, optionally continuing from a prior state."""
    h = state
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def stream_prefix(kind: str, n: int) -> int:
    """Hash state for a (kind, n) experiment cell, extendable per replica."""
    return fnv1a64(kind.encode() + b"|" + (n & MASK64).to_bytes(8, "little"))


def stream_from_prefix(prefix: int, replica: int) -> int:
    """Continue a ``stream_prefix`` hash over the replica index."""
    return fnv1a64((replica & MASK64).to_bytes(8, "little"), prefix)


def stream_id(kind: str, n: int, replica: int) -> int:
    """Stream id for one replica of one experiment cell."""
    return stream_from_prefix(stream_prefix(kind, n), replica)


def substream(sid: int, k: int) -> int:
    """The k-th derived stream id (per-vertex streams inside one soup)."""
    return mix64(((sid + k + 1) * GOLDEN) & MASK64)


def stream_start(seed: int, sid: int) -> int:
    """Initial SplitMix64 state for (seed, streamId)."""
    return mix64(mix64(seed & MASK64) ^ ((sid * GOLDEN + 1) & MASK64))


class RngStream:
    """One independently seeded draw sequence.

    Single-owner by convention: clone ids with :func:`substream` rather than
    sharing an instance across workers.
    """

    __slots__ = ("seed", "stream", "_state")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed & MASK64
        self.stream = stream & MASK64
        self._state = stream_start(seed, stream)

    def u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return mix64(self._state)

    def double53(self) -> float:
        return (self.u64() >> 11) * 1.1102230246251565e-16  # 2**-53

    def randbelow(self, k: int) -> int:
        """Uniform integer in [0, k) via the high half of u64 * k."""
        return (self.u64() * k) >> 64

    def bernoulli(self, p: float) -> bool:
        return self.double53() < p

    def poisson(self, lam: float) -> int:
        """Poisson draw by cumulative-product inversion (small means)."""
        return self.poisson_from_l(math.exp(-lam))

    def poisson_from_l(self, l_value: float) -> int:
        """Poisson draw given L = exp(-lambda), precomputed by the caller."""
        k = 0
        p = 1.0
        while True:
            p *= self.double53()
            if p <= l_value:
                return k
            k += 1
