"""Keyed order-preserving map from a small integer domain into a larger range.

The map is a lazily sampled random strictly increasing function. Encrypting
``x`` walks a binary search over the domain; at each interval the image of the
midpoint is drawn from the admissible part of the current range with an HMAC
keyed pseudorandom draw, so the same key always samples the same function.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import struct
import threading
from dataclasses import dataclass

from .errors import DomainOverflowError, ValidationError

DOMAIN_BITS = 16
RANGE_BITS = 32


@dataclass(frozen=True)
class OpeKey:
    seed: int
    domain_bits: int = DOMAIN_BITS
    range_bits: int = RANGE_BITS

    def __post_init__(self):
        if not 0 < self.domain_bits < self.range_bits <= 64:
            raise ValidationError("need 0 < domain_bits < range_bits <= 64")

    @property
    def secret(self) -> bytes:
        return hashlib.sha256(b"ope-key" + int(self.seed).to_bytes(32, "little", signed=True)).digest()


class _LazyMonotoneMap:
    def __init__(self, key: OpeKey):
        self._key = key
        self._secret = key.secret
        self._cache: dict[int, int] = {}
        self._lock = threading.Lock()

    def _draw(self, lo: int, hi: int, tag: tuple[int, int, int, int]) -> int:
        """Pseudorandom integer in [lo, hi], keyed on the interval."""
        digest = hmac.new(self._secret, struct.pack("<4Q", *tag), hashlib.sha256).digest()
        return lo + int.from_bytes(digest, "little") % (hi - lo + 1)

    def _walk(self, x: int) -> int:
        dlo, dhi = 0, (1 << self._key.domain_bits) - 1
        rlo, rhi = 0, (1 << self._key.range_bits) - 1
        while dlo < dhi:
            dm = (dlo + dhi) // 2
            # leave room for every domain point on both sides of the cut
            y = self._draw(rlo + (dm - dlo), rhi - (dhi - dm), (dlo, dhi, rlo, rhi))
            if x <= dm:
                dhi, rhi = dm, y
            else:
                dlo, rlo = dm + 1, y + 1
        return self._draw(rlo, rhi, (dlo, dhi, rlo, rhi))

    def __call__(self, x: int) -> int:
        with self._lock:
            hit = self._cache.get(x)
            if hit is None:
                hit = self._cache[x] = self._walk(x)
            return hit


@functools.lru_cache(maxsize=32)
def _map_for(key: OpeKey) -> _LazyMonotoneMap:
    return _LazyMonotoneMap(key)


def ope_encrypt(key: OpeKey, x: int) -> int:
    """Order-preserving ciphertext of ``x`` as a non-negative integer."""
    x = int(x)
    if not 0 <= x < (1 << key.domain_bits):
        raise DomainOverflowError(f"{x} outside [0, 2**{key.domain_bits})")
    return _map_for(key)(x)


def ope_encrypt_many(key: OpeKey, xs) -> list[int]:
    return [ope_encrypt(key, x) for x in xs]
