"""Encrypted L1 and KL distance comparison.

Every vector is extended so that one key-switched inner product between a node
cipher and a request cipher evaluates to a randomly scaled, noisy distance:

* L1 node ``[v, r - |v|^2, eps, -1]`` against request ``[2 rc v_c, rc, 1, rc |v_c|^2]``
  gives ``rc (r - |v - v_c|^2) + eps``.
* L1 hyperplane (length ``2 m + 2``) keeps a single sketch coordinate ``s`` and
  gives ``rc (r - (v_s - v_cs)^2) + eps'``.
* KL node ``[A, B, r, eps]`` against request ``[rc Lq, rc Q mask, rc, -1]`` gives
  ``rc (K + r) - eps`` where ``K / Q^2`` is the fixed-point KL divergence.

All quantities are in doubled units so no halves appear. The cloud combines
``Comp = -2 * L1 + KL``; the request scalars are ``rc_l1 = k_l1 r_s`` and
``rc_kl = k_kl r_s`` with ``2 k_l1 s_l1 = k_kl Q^2 = S``, so
``Comp = r_s S Dis + r_s r (k_kl - 2 k_l1) - 2 eps_l1 - eps_kl``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import ive
from .errors import DimensionMismatchError, ValidationError
from .features import FeatureConfig, PreparedVector, kl_fixed_point

EPS_MAX = 1 << 4
R_REQ_MIN = 1 << 17
R_MIN, R_MAX = 1 << 15, 1 << 16
MARGIN_FACTOR = 1 << 10
MAX_NEG_LOG = 745  # -log of the smallest positive double, rounded up


@dataclass(frozen=True)
class ObfuscationConfig:
    r: int
    eps_max: int = EPS_MAX
    r_req_min: int = R_REQ_MIN

    def __post_init__(self):
        if self.r < 1 or self.eps_max < 0 or self.r_req_min < 1:
            raise ValidationError("r and r_req_min must be positive, eps_max non-negative")
        if self.r_req_min <= 6 * self.eps_max * MARGIN_FACTOR:
            raise ValidationError("r_req_min must exceed 6 * eps_max * margin factor")

    @classmethod
    def draw(cls, rng: np.random.Generator, noise: bool = True) -> ObfuscationConfig:
        r = int(rng.integers(R_MIN, R_MAX))
        return cls(r=r, eps_max=EPS_MAX if noise else 0)

    def draw_rs(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.r_req_min, 2 * self.r_req_min))

    def draw_eps(self, rng: np.random.Generator, size=None):
        return rng.integers(-self.eps_max, self.eps_max + 1, size=size)


def alignment(l1_scale: int, kl_scale: int) -> tuple[int, int, int]:
    """Smallest ``(k_l1, k_kl, S)`` with ``2 k_l1 l1_scale = k_kl kl_scale^2 = S``."""
    a, b = 2 * l1_scale, kl_scale * kl_scale
    g = math.gcd(a, b)
    return b // g, a // g, a * b // g


@dataclass(frozen=True)
class CompareParams:
    """Layout sizes, scales and IVE parameters for the three cipher channels."""

    m_hat: int
    m_kl: int
    l1_scale: int
    kl_scale: int
    obf: ObfuscationConfig
    kappa_l1: int
    kappa_kl: int
    scale: int
    ive_l1: ive.IveParams
    ive_l1h: ive.IveParams
    ive_kl: ive.IveParams

    @property
    def dim_l1(self) -> int:
        return self.m_hat + 3

    @property
    def dim_l1h(self) -> int:
        return 2 * self.m_hat + 2

    @property
    def dim_kl(self) -> int:
        return 2 * self.m_kl + 2

    @property
    def offset(self) -> int:
        """Constant term of ``Comp / r_s``, independent of the node."""
        return self.obf.r * (self.kappa_kl - 2 * self.kappa_l1)

    def public(self) -> PublicParams:
        return PublicParams(self.ive_l1, self.ive_l1h, self.ive_kl)

    @classmethod
    def build(cls, fc: FeatureConfig, obf: ObfuscationConfig, e_max: int = ive.DEFAULT_E_MAX) -> CompareParams:
        m_hat, m_kl = fc.m_hat, fc.m_kl
        k_l1, k_kl, s = alignment(fc.l1_scale, fc.kl_scale)
        rs_max = 2 * obf.r_req_min
        # worst-case sketch entry: every unary bit of every coordinate aligned
        v_bound = fc.proj_scale * fc.m_l1 * fc.beta // math.isqrt(m_hat) + 2
        rc1 = k_l1 * rs_max
        sq = m_hat * v_bound * v_bound
        p_l1 = max(v_bound, obf.r + sq, obf.eps_max, 2 * rc1 * v_bound, rc1 * sq, 1)
        p_l1h = max(v_bound, obf.r + v_bound * v_bound, obf.eps_max, 2 * rc1 * v_bound, rc1 * v_bound * v_bound, 1)
        rc2 = k_kl * rs_max
        p_kl = max(fc.kl_scale, obf.r, obf.eps_max, rc2 * fc.kl_scale * MAX_NEG_LOG, rc2 * fc.kl_scale, 1)
        return cls(
            m_hat, m_kl, fc.l1_scale, fc.kl_scale, obf, k_l1, k_kl, s,
            ive.IveParams.for_inner_products(p_l1, m_hat + 3, e_max),
            ive.IveParams.for_inner_products(p_l1h, 2 * m_hat + 2, e_max),
            ive.IveParams.for_inner_products(p_kl, 2 * m_kl + 2, e_max),
        )


@dataclass(frozen=True)
class PublicParams:
    """The IVE parameters the cloud needs; carries no obfuscation secrets."""

    ive_l1: ive.IveParams
    ive_l1h: ive.IveParams
    ive_kl: ive.IveParams


@dataclass(frozen=True, eq=False)
class CompareKeys:
    """Data-side and request-side secret keys for each channel."""

    l1: ive.SecretKey
    l1h: ive.SecretKey
    kl: ive.SecretKey
    req_l1: ive.SecretKey
    req_l1h: ive.SecretKey
    req_kl: ive.SecretKey

    @classmethod
    def generate(cls, params: CompareParams, rng: np.random.Generator) -> CompareKeys:
        specs = [
            (params.dim_l1, params.ive_l1), (params.dim_l1h, params.ive_l1h), (params.dim_kl, params.ive_kl),
        ] * 2
        return cls(*(ive.keygen(d, p, rng) for d, p in specs))

    def switch_keys(self) -> KeySwitchSet:
        return KeySwitchSet(
            ive.keyswitch_key(self.l1, self.req_l1),
            ive.keyswitch_key(self.l1h, self.req_l1h),
            ive.keyswitch_key(self.kl, self.req_kl),
        )


@dataclass(frozen=True, eq=False)
class KeySwitchSet:
    l1: ive.KeySwitchMatrix
    l1h: ive.KeySwitchMatrix
    kl: ive.KeySwitchMatrix


@dataclass(frozen=True, eq=False)
class L1NodeCipher:
    cv: ive.Ciphertext
    ch: ive.Ciphertext | None


@dataclass(frozen=True, eq=False)
class KlNodeCipher:
    cv: ive.Ciphertext
    ch: ive.Ciphertext | None


@dataclass(frozen=True, eq=False)
class L1RequestCipher:
    cv: ive.Ciphertext
    ch: ive.Ciphertext


@dataclass(frozen=True, eq=False)
class KlRequestCipher:
    cv: ive.Ciphertext


# -- plaintext layouts ----------------------------------------------------------

def _ints(values) -> np.ndarray:
    return np.array([int(v) for v in values], dtype=object)


def l1_node_vector(v_hat, r: int, eps: int) -> np.ndarray:
    v = [int(x) for x in v_hat]
    return _ints(v + [r - sum(x * x for x in v), eps, -1])


def l1_hyper_vector(v_hat, coord: int | None, r: int, eps: int) -> np.ndarray:
    m = len(v_hat)
    out = [0] * (2 * m + 2)
    out[m], out[m + 1] = r, eps
    if coord is not None:
        if not 0 <= coord < m:
            raise ValidationError(f"hyperplane coordinate {coord} outside [0, {m})")
        vs = int(v_hat[coord])
        out[coord] = vs
        out[m] = r - vs * vs
        out[m + 2 + coord] = -1
    return _ints(out)


def l1_request_vector(v_hat, rc: int) -> np.ndarray:
    v = [int(x) for x in v_hat]
    return _ints([2 * rc * x for x in v] + [rc, 1, rc * sum(x * x for x in v)])


def l1_request_hyper_vector(v_hat, rc: int) -> np.ndarray:
    v = [int(x) for x in v_hat]
    return _ints([2 * rc * x for x in v] + [rc, 1] + [rc * x * x for x in v])


def kl_node_vector(a, b, r: int, eps: int) -> np.ndarray:
    return _ints([int(x) for x in a] + [int(x) for x in b] + [r, eps])


def kl_hyper_vector(a, b, coord: int | None, r: int, eps: int) -> np.ndarray:
    m = len(a)
    out = [0] * (2 * m + 2)
    out[2 * m], out[2 * m + 1] = r, eps
    if coord is not None:
        if not 0 <= coord < m:
            raise ValidationError(f"hyperplane coordinate {coord} outside [0, {m})")
        out[coord] = int(a[coord])
        out[m + coord] = int(b[coord])
    return _ints(out)


def kl_request_vector(lq, mask, rc: int, kl_scale: int) -> np.ndarray:
    return _ints([rc * int(x) for x in lq] + [rc * kl_scale * int(x) for x in mask] + [rc, -1])


# -- encryption -----------------------------------------------------------------

def _check_len(v, n: int, what: str) -> None:
    if len(v) != n:
        raise DimensionMismatchError(f"{what} has length {len(v)}, expected {n}")


def l1_encrypt_hyper(v_hat, coord, params: CompareParams, keys: CompareKeys, rng) -> ive.Ciphertext:
    vec = l1_hyper_vector(v_hat, coord, params.obf.r, int(params.obf.draw_eps(rng)))
    return ive.encrypt(keys.l1h, vec, params.ive_l1h, rng)


def kl_encrypt_hyper(a, b, coord, params: CompareParams, keys: CompareKeys, rng) -> ive.Ciphertext:
    vec = kl_hyper_vector(a, b, coord, params.obf.r, int(params.obf.draw_eps(rng)))
    return ive.encrypt(keys.kl, vec, params.ive_kl, rng)


def l1_encrypt_node(v_hat, coord, params: CompareParams, keys: CompareKeys, rng, leaf: bool = False) -> L1NodeCipher:
    """``coord`` is the sketch coordinate for the hyperplane, or None when the
    node splits on a KL coordinate. ``leaf=True`` omits the hyperplane."""
    _check_len(v_hat, params.m_hat, "sketch vector")
    obf = params.obf
    cv = ive.encrypt(keys.l1, l1_node_vector(v_hat, obf.r, int(obf.draw_eps(rng))), params.ive_l1, rng)
    ch = None if leaf else l1_encrypt_hyper(v_hat, coord, params, keys, rng)
    return L1NodeCipher(cv, ch)


def kl_encrypt_node(a, b, coord, params: CompareParams, keys: CompareKeys, rng, leaf: bool = False) -> KlNodeCipher:
    _check_len(a, params.m_kl, "KL vector")
    obf = params.obf
    cv = ive.encrypt(keys.kl, kl_node_vector(a, b, obf.r, int(obf.draw_eps(rng))), params.ive_kl, rng)
    ch = None if leaf else kl_encrypt_hyper(a, b, coord, params, keys, rng)
    return KlNodeCipher(cv, ch)


def l1_encrypt_request(v_hat, rc: int, params: CompareParams, keys: CompareKeys, rng) -> L1RequestCipher:
    _check_len(v_hat, params.m_hat, "sketch vector")
    if rc < 1:
        raise ValidationError("request scalar must be positive")
    cv = ive.encrypt(keys.req_l1, l1_request_vector(v_hat, rc), params.ive_l1, rng)
    ch = ive.encrypt(keys.req_l1h, l1_request_hyper_vector(v_hat, rc), params.ive_l1h, rng)
    return L1RequestCipher(cv, ch)


def kl_encrypt_request(lq, mask, rc: int, params: CompareParams, keys: CompareKeys, rng) -> KlRequestCipher:
    _check_len(lq, params.m_kl, "KL request vector")
    if rc < 1:
        raise ValidationError("request scalar must be positive")
    vec = kl_request_vector(lq, mask, rc, params.kl_scale)
    return KlRequestCipher(ive.encrypt(keys.req_kl, vec, params.ive_kl, rng))


@dataclass(frozen=True, eq=False)
class RequestCiphers:
    l1: L1RequestCipher
    kl: KlRequestCipher


def encrypt_request(vec: PreparedVector, r_s: int, params: CompareParams, keys: CompareKeys, rng) -> RequestCiphers:
    if r_s < params.obf.r_req_min:
        raise ValidationError(f"r_s={r_s} below r_req_min={params.obf.r_req_min}")
    return RequestCiphers(
        l1_encrypt_request(vec.v_hat, params.kappa_l1 * r_s, params, keys, rng),
        kl_encrypt_request(vec.kl_lq, vec.kl_mask, params.kappa_kl * r_s, params, keys, rng),
    )


# -- cloud-side evaluation ------------------------------------------------------

def comp_l1(m: ive.KeySwitchMatrix, node: L1NodeCipher, req: L1RequestCipher, params: CompareParams) -> int:
    return ive.inner_product_fast(m, node.cv, req.cv, params.ive_l1)


def comp_l1_hyper(m: ive.KeySwitchMatrix, node: L1NodeCipher, req: L1RequestCipher, params: CompareParams) -> int:
    if node.ch is None:
        raise ValidationError("leaf node has no hyperplane cipher")
    return ive.inner_product_fast(m, node.ch, req.ch, params.ive_l1h)


def comp_kl(m: ive.KeySwitchMatrix, node_cipher: ive.Ciphertext, req: KlRequestCipher, params: CompareParams) -> int:
    """``node_cipher`` is either a node's ``cv`` or its hyperplane ``ch``."""
    return ive.inner_product_fast(m, node_cipher, req.cv, params.ive_kl)


def combine(l1_value: int, kl_value: int) -> int:
    return -2 * l1_value + kl_value


class PreparedRequest:
    """Request ciphers with the key switch pre-applied; counts inner products."""

    def __init__(self, req: RequestCiphers, ksk: KeySwitchSet, params: CompareParams | PublicParams):
        self.params = params
        self.v_l1 = ive.prepare_operand(ksk.l1, req.l1.cv, params.ive_l1)
        self.h_l1 = ive.prepare_operand(ksk.l1h, req.l1.ch, params.ive_l1h)
        self.v_kl = ive.prepare_operand(ksk.kl, req.kl.cv, params.ive_kl)
        self.ops = 0

    def comp_node(self, l1: ive.Ciphertext, kl: ive.Ciphertext) -> int:
        """Comp for a node given its L1 and KL vector ciphers."""
        self.ops += 2
        p = self.params
        return combine(
            ive.inner_product_prepared(l1, self.v_l1, p.ive_l1),
            ive.inner_product_prepared(kl, self.v_kl, p.ive_kl),
        )

    def comp_hyper(self, h_l1: ive.Ciphertext, h_kl: ive.Ciphertext) -> int:
        """Comp for a node's hyperplane pair."""
        if h_l1 is None or h_kl is None:
            raise ValidationError("leaf node has no hyperplane cipher")
        self.ops += 2
        p = self.params
        return combine(
            ive.inner_product_prepared(h_l1, self.h_l1, p.ive_l1h),
            ive.inner_product_prepared(h_kl, self.v_kl, p.ive_kl),
        )


# -- plaintext counterparts -----------------------------------------------------

def distance_key(node: PreparedVector, req: PreparedVector, params: CompareParams) -> int:
    """Integer ``S * Dis`` on the sketch / fixed-point representations."""
    diff = node.v_hat.astype(np.int64) - req.v_hat.astype(np.int64)
    d2 = int(np.dot(diff, diff))
    k = kl_fixed_point(node.kl_a, node.kl_b, req.kl_lq, req.kl_mask, params.kl_scale)
    return 2 * params.kappa_l1 * d2 + params.kappa_kl * k


def hyper_distance_key(node: PreparedVector, req: PreparedVector, l1_coord, kl_coord, params: CompareParams) -> int:
    """``S * Dis(H, V_s)`` for a hyperplane keeping one sketch or one KL coordinate."""
    out = 0
    if l1_coord is not None:
        d = int(node.v_hat[l1_coord]) - int(req.v_hat[l1_coord])
        out += 2 * params.kappa_l1 * d * d
    if kl_coord is not None:
        k = int(node.kl_a[kl_coord]) * int(req.kl_lq[kl_coord])
        k += params.kl_scale * int(node.kl_b[kl_coord]) * int(req.kl_mask[kl_coord])
        out += params.kappa_kl * k
    return out


def expected_comp(dkey: int, r_s: int, params: CompareParams) -> int:
    """Noise-free ``Comp`` for a distance key."""
    return r_s * (dkey + params.offset)


def recover_distance(comp: int, r_s: int, params: CompareParams) -> float:
    """Undo the request scaling and the layout constant."""
    return float(Fraction(comp, r_s * params.scale) - Fraction(params.offset, params.scale))


def kl_quanta_bound(req: PreparedVector, kl_scale: int) -> float:
    """Worst-case gap between the fixed-point KL value and the real one."""
    mask = np.asarray(req.kl_mask, dtype=bool)
    logs = np.asarray(req.kl_lq, dtype=np.float64)[mask] / kl_scale + 0.5 / kl_scale
    m = len(req.kl_mask)
    return float(np.sum(0.5 * logs + 0.5) / kl_scale + 0.5 / kl_scale + m / (4 * kl_scale**2))


def recovery_tolerance(r_s: int, req: PreparedVector, params: CompareParams) -> float:
    noise = 3 * params.obf.eps_max / (r_s * params.scale)
    return noise + kl_quanta_bound(req, params.kl_scale) + 1e-9
