"""Residue arithmetic against Python big integers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encforest._rns import RnsBasis, moduli_for_bound


@pytest.fixture(scope="module")
def basis():
    return RnsBasis(moduli_for_bound(1 << 200))


class TestModuli:
    """Prime selection and basis construction."""

    def test_product_exceeds_bound(self):
        for bits in (10, 64, 200, 400):
            b = RnsBasis(moduli_for_bound(1 << bits))
            assert b.q > 1 << bits
            assert b.q % 2 == 1

    def test_minimal_prefix(self):
        mods = moduli_for_bound(1 << 100)
        assert np.prod([float(m) for m in mods[:-1]]) <= 2.0**100

    def test_rejects_bad_moduli(self):
        with pytest.raises(ValueError):
            RnsBasis((7, 7))
        with pytest.raises(ValueError):
            RnsBasis((2,))


class TestRoundTrip:
    """reduce then lift is the identity mod q."""

    @given(st.lists(st.integers(-(1 << 250), 1 << 250), min_size=1, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_lift_inverts_reduce(self, values):
        b = RnsBasis(moduli_for_bound(1 << 200))
        lifted = b.lift(b.reduce(np.array(values, dtype=object)))
        assert [int(x) for x in lifted] == [v % b.q for v in values]

    def test_unsigned_64bit_input(self, basis):
        v = np.array([2**63 + 1, 2**64 - 1], dtype=np.uint64)
        assert [int(x) for x in basis.lift(basis.reduce(v))] == [2**63 + 1, 2**64 - 1]

    def test_centered(self, basis):
        assert basis.centered(basis.q - 1) == -1
        assert basis.centered(5) == 5


class TestLinearAlgebra:
    """Matrix products and inverses agree with exact integer arithmetic."""

    def test_matmul_matches_bigint(self, basis, rng):
        a = basis.uniform(rng, (6, 6))
        x = basis.uniform(rng, (6, 1))
        got = basis.lift(basis.matmul(a, x))[:, 0]
        A, X = basis.lift(a), basis.lift(x)[:, 0]
        want = [sum(int(A[i, j]) * int(X[j]) for j in range(6)) % basis.q for i in range(6)]
        assert [int(g) for g in got] == want

    def test_inverse(self, basis, rng):
        a = basis.uniform(rng, (8, 8))
        inv = basis.invert(a)
        assert inv is not None
        prod = basis.lift(basis.matmul(a, inv))
        assert np.array_equal(prod.astype(np.int64), np.eye(8, dtype=np.int64))

    def test_singular_returns_none(self, basis):
        a = np.zeros((basis.k, 3, 3), dtype=np.int64)
        assert basis.invert(a) is None

    def test_length_guard(self, basis):
        with pytest.raises(OverflowError):
            basis.check_length(basis.max_dot_length + 1)
