"""Order-preserving map: monotonicity, determinism, key separation."""

import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encforest.errors import DomainOverflowError, ValidationError
from encforest.ope import OpeKey, ope_encrypt


class TestContract:
    """The map is deterministic and strictly increasing."""

    def test_adjacent(self):
        k = OpeKey(1)
        assert ope_encrypt(k, 0) < ope_encrypt(k, 1)

    def test_deterministic(self):
        assert ope_encrypt(OpeKey(7), 4321) == ope_encrypt(OpeKey(7), 4321)

    def test_sorted_sample_strictly_increasing(self):
        xs = np.unique(np.random.default_rng(0).integers(0, 1 << 16, 3000))
        ys = [ope_encrypt(OpeKey(3), int(x)) for x in xs]
        assert all(a < b for a, b in zip(ys, ys[1:]))

    @given(st.integers(0, (1 << 16) - 1), st.integers(0, (1 << 16) - 1))
    @settings(max_examples=200, deadline=None)
    def test_order_of_any_pair(self, a, b):
        k = OpeKey(11)
        ea, eb = ope_encrypt(k, a), ope_encrypt(k, b)
        assert (a < b) == (ea < eb) and (a == b) == (ea == eb)

    def test_range(self):
        k = OpeKey(5)
        for x in (0, 1, 1 << 15, (1 << 16) - 1):
            assert 0 <= ope_encrypt(k, x) < 1 << 32

    def test_distinct_keys_differ(self):
        xs = range(0, 1 << 16, 655)
        a = [ope_encrypt(OpeKey(1), x) for x in xs]
        b = [ope_encrypt(OpeKey(2), x) for x in xs]
        assert sum(x != y for x, y in zip(a, b)) >= 1


class TestErrors:
    """Inputs outside the domain are rejected."""

    @pytest.mark.parametrize("x", [-1, 1 << 16])
    def test_overflow(self, x):
        with pytest.raises(DomainOverflowError):
            ope_encrypt(OpeKey(1), x)

    def test_range_must_exceed_domain(self):
        with pytest.raises(ValidationError):
            OpeKey(1, domain_bits=16, range_bits=16)


class TestConcurrency:
    """Concurrent callers see the same memoized values."""

    def test_threads_agree(self):
        k = OpeKey(99)
        xs = list(range(0, 5000, 7))
        out = [None] * 4

        def work(i):
            out[i] = [ope_encrypt(k, x) for x in xs]

        ts = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        assert out[0] == out[1] == out[2] == out[3]
