"""End-to-end annotation: setup, requests, cloud search, keyword selection."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from encforest import annotator, harness, rkdf
from encforest import secure_compare as sc
from encforest.errors import UnknownRequestError, ValidationError
from encforest.features import kl_divergence

from conftest import make_setup


def annotate(world, q, ap=100, **kw):
    records, state, ef, ksk, _ = world
    req = annotator.make_request(state, records[q].bundle, **kw)
    return req, annotator.cloud_annotate(ef, req, ksk, state.public(), ap)


class TestWeights:
    """Distance to keyword weight conversion."""

    def test_three_images(self):
        w = annotator.image_weights([1, 2, 3])
        np.testing.assert_allclose(w, [5 / 6, 4 / 6, 3 / 6])

    def test_single_result(self):
        assert annotator.image_weights([0.7]) == [1.0]

    def test_all_zero(self):
        assert annotator.image_weights([0, 0]) == [1.0, 1.0]

    def test_negative_clamped(self):
        assert annotator.image_weights([-1e-12, 1.0]) == [1.0, 0.0]

    @given(st.lists(st.floats(0.01, 100), min_size=2, max_size=10))
    def test_weights_sum(self, d):
        w = annotator.image_weights(d)
        assert abs(sum(w) - (len(d) - 1)) < 1e-9
        assert all(0 <= x <= 1 for x in w)

    def test_rank_accumulates(self):
        ranked = annotator.rank_keywords([1, 2, 3], [["a", "b"], ["a"], ["c", "c"]])
        assert ranked[0][0] == "a" and abs(ranked[0][1] - 1.5) < 1e-12
        assert dict(ranked)["c"] == pytest.approx(0.5)


class TestKeywordSealing:
    """Keywords are encrypted per image and bound to the image id."""

    def test_roundtrip(self):
        key = bytes(range(32))
        sealed = annotator.seal_keywords(key, "img-1", ["sky", "sea"])
        assert annotator.open_keywords(key, "img-1", sealed) == ["sky", "sea"]

    def test_wrong_id(self):
        key = bytes(range(32))
        sealed = annotator.seal_keywords(key, "img-1", ["sky"])
        with pytest.raises(Exception):
            annotator.open_keywords(key, "img-2", sealed)


class TestSetup:
    """One-time setup."""

    def test_two_images(self):
        records, state, ef, ksk, _ = make_setup(2, 5, noise=True)
        assert ef.n_images == 2
        req, res = annotate((records, state, ef, ksk, None), 0)
        assert {e.image for e in res.entries} == {0, 1}
        kws = dict(annotator.select_keywords(state, res))
        assert set(records[0].keywords) <= set(kws)

    def test_same_seed_identical_forest(self):
        a = make_setup(30, 9, noise=True)
        b = make_setup(30, 9, noise=True)
        assert rkdf.dumps(a[2]) == rkdf.dumps(b[2])

    def test_different_seed_differs(self):
        a = make_setup(30, 9, noise=True)
        b = make_setup(30, 10, noise=True)
        assert rkdf.dumps(a[2]) != rkdf.dumps(b[2])

    def test_empty(self):
        with pytest.raises(ValidationError):
            annotator.setup([], annotator.SetupConfig(features=harness.profile_config("tiny")), 0)

    def test_state_roundtrip(self, quiet_world):
        _, state, _, _, _ = quiet_world
        buf = annotator.dump_state(state)
        back = annotator.load_state(buf)
        assert annotator.dump_state(back) == buf

    def test_cloud_keys_roundtrip(self, quiet_world):
        _, state, _, ksk, _ = quiet_world
        buf = annotator.dump_cloud_keys(ksk, state.public())
        k2, pub = annotator.load_cloud_keys(buf)
        assert annotator.dump_cloud_keys(k2, pub) == buf


class TestRequests:
    """Per-request encryption."""

    def test_ope_count_matches_split_fields(self, noisy_world):
        records, state, ef, _, _ = noisy_world
        req = annotator.make_request(state, records[1].bundle)
        assert sorted(req.ope) == sorted(ef.sf) == sorted(state.sf)

    def test_ids_unique_and_ledgered(self, noisy_world):
        records, state, _, _, _ = noisy_world
        a = annotator.make_request(state, records[1].bundle)
        b = annotator.make_request(state, records[1].bundle)
        assert a.request_id != b.request_id
        assert a.request_id in state.ledger and b.request_id in state.ledger
        assert state.params.obf.r_req_min <= state.ledger[a.request_id].r_s < 2 * state.params.obf.r_req_min

    def test_request_roundtrip(self, noisy_world):
        records, state, _, _, _ = noisy_world
        req = annotator.make_request(state, records[2].bundle)
        buf = annotator.dump_request(req)
        assert annotator.dump_request(annotator.load_request(buf)) == buf


class TestCloudSearch:
    """Results match the plaintext oracle."""

    def test_full_access_matches_scan_noise_off(self, quiet_world):
        records, state, ef, ksk, vecs = quiet_world
        for q in (0, 50, 123):
            _, res = annotate(quiet_world, q)
            truth = harness.linear_scan_oracle(vecs, vecs[q], ef.queue_size, "plaintext", state.params)
            assert [e.image for e in res.entries] == [i for i, _ in truth]

    def test_recovery_within_tolerance(self, noisy_world):
        records, state, ef, ksk, vecs = noisy_world
        fc = state.config.features
        for q in (4, 99):
            req, res = annotate(noisy_world, q)
            entry = state.ledger[req.request_id]
            noise = 3 * state.params.obf.eps_max / (entry.r_s * state.params.scale) + 1e-12
            for e in res.entries:
                dis = annotator.recover_distance(state, req.request_id, e.comp)
                node, query = vecs[e.image], vecs[q]
                fp = sc.distance_key(node, query, state.params) / state.params.scale
                # sketch L1 with real-valued KL: the quantity the tolerance covers
                sketch_l1 = float(np.sum((node.v_hat - query.v_hat) ** 2)) / fc.l1_scale
                real = sketch_l1 + kl_divergence(node.normalized.v_kl, query.normalized.v_kl)
                assert abs(dis - fp) <= noise
                assert abs(dis - real) <= entry.tolerance

    def test_self_match_keywords(self, quiet_world):
        records, state, _, _, _ = quiet_world
        _, res = annotate(quiet_world, 17)
        top = [k for k, _ in annotator.select_keywords(state, res, top_k=len(records[17].keywords))]
        assert set(top) == set(records[17].keywords)

    def test_rs_invariance(self, quiet_world):
        records, state, _, _, _ = quiet_world
        lo = state.params.obf.r_req_min
        r1, res1 = annotate(quiet_world, 6, r_s=lo)
        r2, res2 = annotate(quiet_world, 6, r_s=2 * lo - 1)
        d1 = [annotator.recover_distance(state, r1.request_id, e.comp) for e in res1.entries]
        d2 = [annotator.recover_distance(state, r2.request_id, e.comp) for e in res2.entries]
        assert d1 == d2

    def test_ledger_consumed(self, noisy_world):
        _, state, _, _, _ = noisy_world
        req, res = annotate(noisy_world, 8)
        annotator.select_keywords(state, res)
        with pytest.raises(UnknownRequestError):
            annotator.select_keywords(state, res)

    def test_unknown_request(self, noisy_world):
        _, state, _, _, _ = noisy_world
        with pytest.raises(UnknownRequestError):
            annotator.recover_distance(state, "req-999999", 0)

    def test_results_roundtrip(self, noisy_world):
        _, res = annotate(noisy_world, 3, ap=10)
        buf = annotator.dump_results(res)
        back = annotator.load_results(buf)
        assert [(e.image, e.comp, e.sealed) for e in back.entries] == [(e.image, e.comp, e.sealed) for e in res.entries]
        assert back.ops == res.ops
