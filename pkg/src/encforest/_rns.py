"""Residue-number-system arithmetic for large odd moduli.

A modulus ``q`` is the product of distinct primes below ``2**20``. Every
value mod ``q`` is held as one residue per prime, so matrix products reduce
to float64 BLAS calls that stay exact: a single product is below ``2**40``
and a dot product of length ``n`` stays below ``2**53`` while
``n <= max_dot_length``.
"""

from __future__ import annotations

import functools
from math import prod

import numpy as np

MODULUS_BITS = 20
_FLOAT_EXACT = 1 << 53


@functools.lru_cache(maxsize=None)
def _prime_table() -> tuple[int, ...]:
    limit = 1 << MODULUS_BITS
    sieve = np.ones(limit, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(limit**0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = False
    # largest first, so small bases still give big moduli
    return tuple(int(p) for p in np.flatnonzero(sieve)[::-1] if p > 2)


def moduli_for_bound(bound: int) -> tuple[int, ...]:
    """Smallest prefix of the prime table whose product exceeds ``bound``."""
    out = []
    acc = 1
    for p in _prime_table():
        out.append(p)
        acc *= p
        if acc > bound:
            return tuple(out)
    raise OverflowError(f"bound needs more than {len(out)} residue moduli")


class RnsBasis:
    """CRT basis over a fixed tuple of odd primes."""

    def __init__(self, moduli: tuple[int, ...]):
        if not moduli:
            raise ValueError("empty modulus basis")
        if len(set(moduli)) != len(moduli):
            raise ValueError("moduli must be distinct")
        if any(m >= (1 << MODULUS_BITS) or m < 3 for m in moduli):
            raise ValueError(f"moduli must be odd primes below 2**{MODULUS_BITS}")
        self.moduli = tuple(int(m) for m in moduli)
        self.q = prod(self.moduli)
        self.k = len(self.moduli)
        self._p = np.array(self.moduli, dtype=np.int64)
        self._pf = self._p.astype(np.float64)
        coeffs = []
        for m in self.moduli:
            rest = self.q // m
            coeffs.append(rest * pow(rest, -1, m))
        self._crt = np.array(coeffs, dtype=object)
        top = max(self.moduli) - 1
        self.max_dot_length = (_FLOAT_EXACT - 1) // (top * top)

    def __eq__(self, other):
        return isinstance(other, RnsBasis) and other.moduli == self.moduli

    def __hash__(self):
        return hash(self.moduli)

    def _shape(self, ndim: int) -> tuple[int, ...]:
        return (self.k,) + (1,) * ndim

    def reduce(self, values) -> np.ndarray:
        """Integers (any size, any sign) -> int64 residues of shape (k, *shape)."""
        arr = np.asarray(values)
        if arr.dtype.kind == "i" or (arr.dtype.kind == "u" and arr.dtype.itemsize < 8):
            a = arr.astype(np.int64)
            return a[None, ...] % self._p.reshape(self._shape(a.ndim))
        obj = np.asarray(values, dtype=object)
        out = np.empty((self.k,) + obj.shape, dtype=np.int64)
        for i, m in enumerate(self.moduli):
            out[i] = (obj % m).astype(np.int64)
        return out

    def lift(self, residues: np.ndarray) -> np.ndarray:
        """CRT reconstruction: residues (k, *shape) -> object array in [0, q)."""
        r = np.asarray(residues, dtype=np.int64)
        acc = np.zeros(r.shape[1:], dtype=object)
        for i in range(self.k):
            acc = acc + r[i].astype(object) * self._crt[i]
        return acc % self.q

    def lift_scalar(self, residues) -> int:
        acc = 0
        for i, ri in enumerate(residues):
            acc += int(ri) * int(self._crt[i])
        return acc % self.q

    def centered(self, x):
        """Map [0, q) into (-q/2, q/2]."""
        half = self.q // 2
        if isinstance(x, np.ndarray):
            return np.where(x > half, x - self.q, x)
        return x - self.q if x > half else x

    def check_length(self, n: int) -> None:
        if n > self.max_dot_length:
            raise OverflowError(
                f"dimension {n} exceeds exact accumulation width ({self.max_dot_length})"
            )

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """(k, n, m) @ (k, m, ...) mod each prime, exact."""
        self.check_length(a.shape[-1])
        out = np.matmul(a.astype(np.float64), b.astype(np.float64))
        out = np.fmod(out, self._pf.reshape(self._shape(out.ndim - 1)))
        return out.astype(np.int64)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a * b) % self._p.reshape(self._shape(a.ndim - 1))

    def dot_last(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Sum over the last axis of a*b, per prime -> (k, ...)."""
        self.check_length(a.shape[-1])
        out = np.einsum("k...j,k...j->k...", a.astype(np.float64), b.astype(np.float64))
        return np.fmod(out, self._pf.reshape(self._shape(out.ndim - 1))).astype(np.int64)

    def uniform(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        """Uniform residues mod q (uniform per prime is uniform mod q by CRT)."""
        out = np.empty((self.k,) + tuple(shape), dtype=np.int64)
        for i, m in enumerate(self.moduli):
            out[i] = rng.integers(0, m, size=shape, dtype=np.int64)
        return out

    def invert(self, mats: np.ndarray) -> np.ndarray | None:
        """Gauss-Jordan inverse of (k, n, n) residue matrices; None if any is singular."""
        k, n, _ = mats.shape
        p = self._p[:, None]
        aug = np.concatenate([mats % p[:, :, None], np.broadcast_to(np.eye(n, dtype=np.int64), (k, n, n))], axis=2)
        aug = aug.copy()
        ks = np.arange(k)
        for col in range(n):
            nz = aug[:, col:, col] != 0
            if not nz.any(axis=1).all():
                return None
            piv = col + nz.argmax(axis=1)
            top = aug[ks, col].copy()
            aug[ks, col] = aug[ks, piv]
            aug[ks, piv] = top
            inv = np.array([pow(int(v), -1, m) for v, m in zip(aug[:, col, col], self.moduli)], dtype=np.int64)
            aug[:, col] = (aug[:, col] * inv[:, None]) % p
            factors = aug[:, :, col].copy()
            factors[:, col] = 0
            aug = (aug - factors[:, :, None] * aug[:, col][:, None, :]) % p[:, :, None]
        return aug[:, :, n:].copy()
