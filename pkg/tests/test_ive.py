"""Integer-vector encryption: roundtrips, key-switched products, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encforest import ive
from encforest.errors import DimensionMismatchError, PlaintextRangeError, ValidationError


def bigint_matvec(m, v, q):
    return [sum(int(m[i, j]) * int(v[j]) for j in range(len(v))) % q for i in range(m.shape[0])]


def centered(x, q):
    return x - q if x > q // 2 else x


@pytest.fixture(scope="module")
def params():
    return ive.IveParams.for_inner_products(p=1 << 20, dim=12)


@pytest.fixture(scope="module")
def keys(params):
    s1 = ive.keygen(12, params, 1)
    s2 = ive.keygen(12, params, 2)
    return s1, s2, ive.keyswitch_key(s1, s2)


class TestParams:
    """Derived parameters satisfy the exactness conditions."""

    def test_exact_products(self, params):
        assert params.exact_products()
        assert params.w > 2 * params.e_max

    def test_rejects_small_w(self):
        with pytest.raises(ValidationError):
            ive.IveParams((1048573,), p=3, w=8, e_max=4, dim_max=2)

    @pytest.mark.parametrize("p,dim", [(1, 1), (1 << 40, 50), (1 << 70, 300)])
    def test_bound_arithmetic(self, p, dim):
        prm = ive.IveParams.for_inner_products(p, dim)
        slack = 2 * p * prm.e_max * dim + prm.e_max**2 * dim
        assert prm.w > 2 * slack + 1
        assert prm.q > 4 * prm.w**2 * p**2 * dim


class TestEncryption:
    """Ciphertexts follow the defining congruence and decrypt exactly."""

    def test_defining_congruence(self, params, keys, rng):
        s1 = keys[0]
        v = rng.integers(-params.p, params.p + 1, 12)
        e = rng.integers(-params.e_max, params.e_max + 1, 12)
        c = ive.encrypt_exact(s1, v, e, params)
        # S c = w v + e (mod q), checked with big integers
        sc = bigint_matvec(s1.matrix(), c.c, params.q)
        assert [centered(x, params.q) for x in sc] == [params.w * int(a) + int(b) for a, b in zip(v, e)]

    def test_roundtrip(self, params, keys, rng):
        s1 = keys[0]
        for _ in range(50):
            v = rng.integers(-params.p, params.p + 1, 12)
            assert np.array_equal(ive.decrypt(s1, ive.encrypt(s1, v, params, rng), params), v)

    def test_identity_key_zero_error(self):
        prm = ive.IveParams((1048573, 1048571), p=100, w=1, e_max=0, dim_max=3)
        k = ive.identity_key(3, prm)
        c = ive.encrypt_exact(k, [1, -2, 3], [0, 0, 0], prm)
        assert [centered(x, prm.q) for x in c.c] == [1, -2, 3]

    def test_out_of_range(self, params, keys, rng):
        with pytest.raises(PlaintextRangeError):
            ive.encrypt(keys[0], np.full(12, params.p + 1), params, rng)

    def test_dimension_mismatch(self, params, keys, rng):
        with pytest.raises(DimensionMismatchError):
            ive.encrypt(keys[0], np.zeros(5, dtype=np.int64), params, rng)

    def test_fresh_randomness(self, params, keys, rng):
        v = np.arange(12)
        a = ive.encrypt(keys[0], v, params, rng)
        b = ive.encrypt(keys[0], v, params, rng)
        assert sum(x != y for x, y in zip(a.c, b.c)) >= 11


class TestInnerProduct:
    """Key-switched products equal plaintext dot products."""

    def test_bigint_bilinear_form(self, params, keys, rng):
        s1, s2, m = keys
        v1 = rng.integers(-params.p, params.p + 1, 12)
        v2 = rng.integers(-params.p, params.p + 1, 12)
        c1, c2 = ive.encrypt(s1, v1, params, rng), ive.encrypt(s2, v2, params, rng)
        mc2 = bigint_matvec(m.matrix(), c2.c, params.q)
        x = centered(sum(a * b for a, b in zip(c1.c, mc2)) % params.q, params.q)
        w2 = params.w**2
        assert (2 * x + w2) // (2 * w2) == int(np.dot(v1.astype(object), v2.astype(object)))

    def test_reference_and_fast_agree(self, params, keys, rng):
        s1, s2, m = keys
        for _ in range(30):
            v1 = rng.integers(-params.p, params.p + 1, 12)
            v2 = rng.integers(-params.p, params.p + 1, 12)
            c1, c2 = ive.encrypt(s1, v1, params, rng), ive.encrypt(s2, v2, params, rng)
            want = int(np.dot(v1.astype(object), v2.astype(object)))
            ref = ive.inner_product(m, c1, c2, params)
            fast = ive.inner_product_fast(m, c1, c2, params)
            assert fast == want
            assert abs(ref - fast) <= 1

    def test_batched_prepared(self, params, keys, rng):
        s1, s2, m = keys
        v2 = rng.integers(-9, 10, 12)
        prep = ive.prepare_operand(m, ive.encrypt(s2, v2, params, rng), params)
        vs = rng.integers(-params.p, params.p + 1, (7, 12))
        cs = ive.encrypt_many(s1, vs, params, rng)
        assert ive.inner_products_prepared(cs, prep, params) == [int(v @ v2) for v in vs]

    @given(st.lists(st.integers(-1000, 1000), min_size=4, max_size=4), st.lists(st.integers(-1000, 1000), min_size=4, max_size=4))
    @settings(max_examples=40, deadline=None)
    def test_property_small(self, a, b):
        prm = ive.IveParams.for_inner_products(1000, 4)
        s1, s2 = ive.keygen(4, prm, 5), ive.keygen(4, prm, 6)
        m = ive.keyswitch_key(s1, s2)
        g = np.random.default_rng(0)
        c1, c2 = ive.encrypt(s1, np.array(a), prm, g), ive.encrypt(s2, np.array(b), prm, g)
        assert ive.inner_product_fast(m, c1, c2, prm) == sum(x * y for x, y in zip(a, b))

    def test_mismatched_dims(self, params, keys, rng):
        s1, _, m = keys
        small = ive.IveParams.for_inner_products(10, 3)
        c = ive.encrypt(ive.keygen(3, small, 0), [1, 2, 3], small, rng)
        with pytest.raises(DimensionMismatchError):
            ive.inner_product_fast(m, c, c, params)


class TestSerialization:
    """Bit-exact roundtrips of every record kind."""

    def test_roundtrip(self, params, keys, rng):
        s1, _, m = keys
        c = ive.encrypt(s1, np.arange(12), params, rng)
        for obj in (c, s1, m):
            blob = ive.dumps(obj)
            assert blob[:4] == b"IVE1"
            back = ive.loads(blob)
            assert back == obj
            assert ive.dumps(back) == blob

    def test_bad_magic(self):
        with pytest.raises(ValidationError):
            ive.loads(b"XXXX" + bytes(12))
