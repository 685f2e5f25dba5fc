"""Integer-vector encryption with key-switched inner products.

A vector ``v`` is encrypted as ``c = S^-1 (w v + e) mod q`` and decrypted by
rounding ``S c / w``. Given ``c1`` under ``S1``, ``c2`` under ``S2`` and
``M = S1^T S2``, the bilinear form ``c1^T M c2`` equals
``(w v1 + e1) . (w v2 + e2) mod q``; two divisions by ``w`` recover ``v1 . v2``.

Residues live in an RNS basis (see ``_rns``); ``q`` is the basis product.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field

import numpy as np

from ._rns import RnsBasis, moduli_for_bound
from .errors import DimensionMismatchError, PlaintextRangeError, ValidationError

MAGIC = b"IVE1"
KIND_CIPHERTEXT = 1
KIND_SECRET_KEY = 2
KIND_KEYSWITCH = 3

DEFAULT_E_MAX = 1 << 6


@functools.lru_cache(maxsize=64)
def _basis(moduli: tuple[int, ...]) -> RnsBasis:
    return RnsBasis(moduli)


@dataclass(frozen=True)
class IveParams:
    """Modulus basis, plaintext bound ``p``, scale ``w`` and error bound ``e_max``.

    ``dim_max`` is the largest vector length the parameters are certified for.
    """

    moduli: tuple[int, ...]
    p: int
    w: int
    e_max: int
    dim_max: int

    def __post_init__(self):
        if self.p < 1 or self.w < 1 or self.e_max < 0 or self.dim_max < 1:
            raise ValidationError("IVE parameters must be positive")
        if not self.w > 2 * self.e_max:
            raise ValidationError(f"need w > 2*e_max, got w={self.w}, e_max={self.e_max}")
        if self.q % 2 == 0:
            raise ValidationError("q must be odd")
        if not self.q > 2 * self.w * self.p * self.dim_max:
            raise ValidationError("q too small for w*p*dim without wraparound")

    @property
    def basis(self) -> RnsBasis:
        return _basis(self.moduli)

    @property
    def q(self) -> int:
        return self.basis.q

    @classmethod
    def for_inner_products(cls, p: int, dim: int, e_max: int = DEFAULT_E_MAX) -> IveParams:
        """Smallest power-of-two ``w`` and basis for which products are exact.

        The cross terms ``v1.e2 + e1.v2 + e1.e2/w`` must stay under ``w/2`` and
        ``|(w v1 + e1).(w v2 + e2)|`` under ``q/2``.
        """
        slack = 2 * p * e_max * dim + e_max * e_max * dim
        w = 1 << max(8, (2 * slack + 2).bit_length())
        bound = 4 * w * w * p * p * dim + 2 * w * slack + 2 * (w * p + e_max)
        return cls(moduli_for_bound(bound), p, w, e_max, dim)

    def exact_products(self) -> bool:
        slack = 2 * self.p * self.e_max * self.dim_max + self.e_max**2 * self.dim_max
        return self.w > 2 * slack + 1 and self.q > 4 * self.w**2 * self.p**2 * self.dim_max


@dataclass(frozen=True, eq=False)
class SecretKey:
    """``S`` and ``S^-1`` as residue stacks of shape (k, dim, dim)."""

    s: np.ndarray
    s_inv: np.ndarray
    moduli: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.s.shape[1]

    @property
    def basis(self) -> RnsBasis:
        return _basis(self.moduli)

    def matrix(self) -> np.ndarray:
        return self.basis.lift(self.s)

    def inverse_matrix(self) -> np.ndarray:
        return self.basis.lift(self.s_inv)

    def __eq__(self, other):
        return (
            isinstance(other, SecretKey)
            and self.moduli == other.moduli
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.s_inv, other.s_inv)
        )


@dataclass(frozen=True, eq=False)
class Ciphertext:
    res: np.ndarray
    moduli: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.res.shape[1]

    @property
    def c(self) -> tuple[int, ...]:
        return tuple(int(x) for x in _basis(self.moduli).lift(self.res))

    def __eq__(self, other):
        return isinstance(other, Ciphertext) and self.moduli == other.moduli and np.array_equal(self.res, other.res)


@dataclass(frozen=True, eq=False)
class KeySwitchMatrix:
    """``S1^T S2 mod q``; ``flatten`` gives the row-major vector form."""

    m: np.ndarray
    moduli: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.m.shape[1]

    def matrix(self) -> np.ndarray:
        return _basis(self.moduli).lift(self.m)

    def flatten(self) -> np.ndarray:
        return self.matrix().reshape(-1)

    def __eq__(self, other):
        return isinstance(other, KeySwitchMatrix) and self.moduli == other.moduli and np.array_equal(self.m, other.m)


@dataclass(frozen=True, eq=False)
class PreparedOperand:
    """``M c2`` cached so each further product with ``c2`` is one dot product."""

    y: np.ndarray
    moduli: tuple[int, ...]
    dim: int = field(default=0)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _round_div(a, b: int):
    # nearest integer, halves rounded up; works on ints and object arrays
    return (2 * a + b) // (2 * b)


def keygen(dim: int, params: IveParams, seed) -> SecretKey:
    if dim < 1:
        raise ValidationError("key dimension must be >= 1")
    if dim > params.dim_max:
        raise DimensionMismatchError(f"dim {dim} exceeds params.dim_max {params.dim_max}")
    rng = _as_rng(seed)
    basis = params.basis
    while True:
        s = basis.uniform(rng, (dim, dim))
        s_inv = basis.invert(s)
        if s_inv is not None:
            return SecretKey(s, s_inv, params.moduli)


def identity_key(dim: int, params: IveParams) -> SecretKey:
    eye = np.broadcast_to(np.eye(dim, dtype=np.int64), (len(params.moduli), dim, dim)).copy()
    return SecretKey(eye, eye.copy(), params.moduli)


def _check_range(v: np.ndarray, p: int) -> None:
    if v.dtype == object:
        bad = any(abs(int(x)) > p for x in v.reshape(-1))
    else:
        bad = bool(np.any(np.abs(v.astype(np.int64)) > p)) if v.size else False
    if bad:
        raise PlaintextRangeError(f"plaintext entry exceeds bound p={p}")


def encrypt_many(key: SecretKey, vectors, params: IveParams, rng) -> list[Ciphertext]:
    """Encrypt each row of ``vectors`` with a fresh error vector."""
    rng = _as_rng(rng)
    v = np.asarray(vectors)
    if v.ndim != 2 or v.shape[1] != key.dim:
        raise DimensionMismatchError(f"expected rows of length {key.dim}, got shape {v.shape}")
    if v.dtype.kind not in "iuO":
        raise ValidationError("plaintexts must be integers")
    _check_range(v, params.p)
    basis = params.basis
    e = rng.integers(-params.e_max, params.e_max + 1, size=v.shape, dtype=np.int64)
    w_res = np.array([params.w % m for m in basis.moduli], dtype=np.int64)
    x = (basis.reduce(v) * w_res[:, None, None] + basis.reduce(e)) % basis._p[:, None, None]
    c = basis.matmul(key.s_inv, np.transpose(x, (0, 2, 1)))
    return [Ciphertext(np.ascontiguousarray(c[:, :, i]), params.moduli) for i in range(v.shape[0])]


def encrypt(key: SecretKey, v, params: IveParams, rng) -> Ciphertext:
    v = np.asarray(v)
    if v.ndim != 1:
        raise DimensionMismatchError("plaintext must be a vector")
    return encrypt_many(key, v[None, :], params, rng)[0]


def encrypt_exact(key: SecretKey, v, e, params: IveParams) -> Ciphertext:
    """Encryption with a caller-supplied error vector (tests, degenerate keys)."""
    v = np.asarray(v)
    e = np.asarray(e, dtype=np.int64)
    if v.shape != (key.dim,) or e.shape != (key.dim,):
        raise DimensionMismatchError("plaintext/error length must match key")
    _check_range(v, params.p)
    if np.any(np.abs(e) > params.e_max):
        raise ValidationError("error vector exceeds e_max")
    basis = params.basis
    w_res = np.array([params.w % m for m in basis.moduli], dtype=np.int64)
    x = (basis.reduce(v) * w_res[:, None] + basis.reduce(e)) % basis._p[:, None]
    c = basis.matmul(key.s_inv, x[:, :, None])[:, :, 0]
    return Ciphertext(c, params.moduli)


def decrypt(key: SecretKey, c: Ciphertext, params: IveParams) -> np.ndarray:
    if c.dim != key.dim:
        raise DimensionMismatchError(f"ciphertext dim {c.dim} != key dim {key.dim}")
    basis = params.basis
    y = basis.matmul(key.s, c.res[:, :, None])[:, :, 0]
    v = _round_div(basis.centered(basis.lift(y)), params.w)
    if params.p < (1 << 62):
        return v.astype(np.int64)
    return v


def keyswitch_key(s1: SecretKey, s2: SecretKey) -> KeySwitchMatrix:
    if s1.dim != s2.dim:
        raise DimensionMismatchError(f"key dims differ: {s1.dim} vs {s2.dim}")
    if s1.moduli != s2.moduli:
        raise ValidationError("keys built over different moduli")
    basis = s1.basis
    m = basis.matmul(np.transpose(s1.s, (0, 2, 1)), s2.s)
    return KeySwitchMatrix(m, s1.moduli)


def _check_pair(m: KeySwitchMatrix, c1: Ciphertext, c2: Ciphertext) -> None:
    if not (m.dim == c1.dim == c2.dim):
        raise DimensionMismatchError(f"dims differ: M {m.dim}, c1 {c1.dim}, c2 {c2.dim}")


def inner_product(m: KeySwitchMatrix, c1: Ciphertext, c2: Ciphertext, params: IveParams) -> int:
    """Reference path: ``<vec(M), vec(c1 c2^T)>`` then one rounding per ``w``.

    The first rounding yields ``w v1.v2 + e``, the second removes ``w``.
    """
    _check_pair(m, c1, c2)
    basis = params.basis
    basis.check_length(c1.dim)
    outer = basis.mul(c1.res[:, :, None], c2.res[:, None, :]).reshape(basis.k, -1)
    terms = basis.mul(m.m.reshape(basis.k, -1), outer)
    x = terms.sum(axis=1) % basis._p
    scaled = _round_div(basis.centered(basis.lift_scalar(x)), params.w)
    return _round_div(scaled, params.w)


def inner_product_fast(m: KeySwitchMatrix, c1: Ciphertext, c2: Ciphertext, params: IveParams) -> int:
    """Fast path: ``c1^T (M c2)`` with a single division by ``w**2``."""
    _check_pair(m, c1, c2)
    return inner_product_prepared(c1, prepare_operand(m, c2, params), params)


def prepare_operand(m: KeySwitchMatrix, c2: Ciphertext, params: IveParams) -> PreparedOperand:
    if m.dim != c2.dim:
        raise DimensionMismatchError(f"dims differ: M {m.dim}, c2 {c2.dim}")
    y = params.basis.matmul(m.m, c2.res[:, :, None])[:, :, 0]
    return PreparedOperand(y, params.moduli, c2.dim)


def inner_product_prepared(c1: Ciphertext, prep: PreparedOperand, params: IveParams) -> int:
    if c1.dim != prep.dim:
        raise DimensionMismatchError(f"dims differ: c1 {c1.dim}, prepared {prep.dim}")
    basis = params.basis
    x = basis.dot_last(c1.res, prep.y)
    return _round_div(basis.centered(basis.lift_scalar(x)), params.w * params.w)


def inner_products_prepared(cs: list[Ciphertext], prep: PreparedOperand, params: IveParams) -> list[int]:
    """Batched fast path against one prepared right operand."""
    if not cs:
        return []
    basis = params.basis
    stack = np.stack([c.res for c in cs], axis=1)  # (k, N, dim)
    if stack.shape[2] != prep.dim:
        raise DimensionMismatchError("ciphertext dims differ from prepared operand")
    x = basis.dot_last(stack, np.broadcast_to(prep.y[:, None, :], stack.shape))
    vals = basis.centered(basis.lift(x))
    return [int(v) for v in _round_div(vals, params.w * params.w)]


# -- serialization -------------------------------------------------------------

def _header(kind: int, dim: int, moduli: tuple[int, ...]) -> bytes:
    return MAGIC + struct.pack("<III", dim, len(moduli), kind) + struct.pack(f"<{len(moduli)}Q", *moduli)


def _words(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<u8").tobytes()


def dumps(obj) -> bytes:
    """Serialize a Ciphertext, SecretKey or KeySwitchMatrix."""
    if isinstance(obj, Ciphertext):
        return _header(KIND_CIPHERTEXT, obj.dim, obj.moduli) + _words(obj.res)
    if isinstance(obj, SecretKey):
        return _header(KIND_SECRET_KEY, obj.dim, obj.moduli) + _words(obj.s) + _words(obj.s_inv)
    if isinstance(obj, KeySwitchMatrix):
        return _header(KIND_KEYSWITCH, obj.dim, obj.moduli) + _words(obj.m)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def loads_from(buf: bytes, offset: int = 0):
    """Parse one object starting at ``offset``; returns (obj, next_offset)."""
    if buf[offset : offset + 4] != MAGIC:
        raise ValidationError("bad IVE magic")
    dim, k, kind = struct.unpack_from("<III", buf, offset + 4)
    offset += 16
    moduli = struct.unpack_from(f"<{k}Q", buf, offset)
    offset += 8 * k

    def take(count: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        a = np.frombuffer(buf, dtype="<u8", count=count, offset=offset).astype(np.int64).reshape(shape)
        offset += 8 * count
        return a

    if kind == KIND_CIPHERTEXT:
        return Ciphertext(take(k * dim, (k, dim)), moduli), offset
    if kind == KIND_SECRET_KEY:
        s = take(k * dim * dim, (k, dim, dim))
        return SecretKey(s, take(k * dim * dim, (k, dim, dim)), moduli), offset
    if kind == KIND_KEYSWITCH:
        return KeySwitchMatrix(take(k * dim * dim, (k, dim, dim)), moduli), offset
    raise ValidationError(f"unknown IVE record kind {kind}")


def loads(buf: bytes):
    obj, end = loads_from(buf, 0)
    if end != len(buf):
        raise ValidationError("trailing bytes after IVE record")
    return obj
