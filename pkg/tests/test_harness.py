"""Evaluation harness: corpus generator, oracles, metrics, sweeps."""

import numpy as np
import pytest

from encforest import annotator, harness
from encforest import secure_compare as sc
from encforest.errors import ValidationError


class TestCorpus:
    """Synthetic corpus generator."""

    def test_deterministic(self):
        a = harness.generate_corpus(20, 3, "tiny")
        b = harness.generate_corpus(20, 3, "tiny")
        assert [r.to_json() for r in a] == [r.to_json() for r in b]

    def test_shape(self):
        recs = harness.generate_corpus(50, 4, "tiny")
        assert len({r.id for r in recs}) == 50
        cfg = harness.profile_config("tiny")
        for r in recs:
            assert all(r.bundle[p].shape == (cfg.dims[p],) for p in cfg.dims)
            assert len([k for k in r.keywords if not k.startswith("rare-")]) == harness.CORE_KEYWORDS
            assert all(k.startswith(harness.cluster_of(r)) or k.startswith("rare-") for k in r.keywords)

    def test_split_queries(self):
        recs = harness.generate_corpus(30, 5, "tiny")
        corpus, queries = harness.split_queries(recs, 5, 0)
        assert len(corpus) == 25 and len(queries) == 5
        assert not {r.id for r in corpus} & {r.id for r in queries}
        with pytest.raises(ValidationError):
            harness.split_queries(recs, 30, 0)


class TestRecall:
    """Keyword recall metric."""

    def test_perfect(self):
        assert harness.eval_recall([["a", "b"]], [["a", "b"]]) == 1.0

    def test_worked_example(self):
        # keyword a: 1 of 2 queries; keyword b: 1 of 1 -> mean 0.75
        assert harness.eval_recall([["a", "b"], ["c"]], [["a", "b"], ["a"]]) == 0.75

    def test_duplicates_ignored(self):
        assert harness.eval_recall([["a", "a"]], [["a", "a"]]) == 1.0

    def test_errors(self):
        with pytest.raises(ValidationError):
            harness.eval_recall([["a"]], [])
        with pytest.raises(ValidationError):
            harness.eval_recall([[]], [[]])


class TestOracles:
    """Linear-scan oracle modes agree with each other."""

    def test_plaintext_matches_encrypted_noise_off(self, quiet_world):
        records, state, ef, ksk, vecs = quiet_world
        req = sc.encrypt_request(vecs[10], 150_000, state.params, state.keys, np.random.default_rng(0))
        prep = sc.PreparedRequest(req, ksk, state.public())
        plain = harness.linear_scan_oracle(vecs, vecs[10], 10, "plaintext", state.params)
        enc = harness.linear_scan_oracle(vecs, vecs[10], 10, "encrypted", ef=ef, prepared=prep)
        assert [i for i, _ in plain] == [i for i, _ in enc]
        for (_, d), (_, c) in zip(plain, enc):
            assert sc.recover_distance(c, 150_000, state.params) == pytest.approx(d, abs=1e-12)

    def test_exact_close_to_plaintext(self, quiet_world):
        _, state, _, _, vecs = quiet_world
        plain = {i for i, _ in harness.linear_scan_oracle(vecs, vecs[30], 10, "plaintext", state.params)}
        exact = {i for i, _ in harness.linear_scan_oracle(vecs, vecs[30], 10, "exact")}
        assert len(plain & exact) >= 6

    def test_self_first(self, quiet_world):
        _, _, _, _, vecs = quiet_world
        assert harness.linear_scan_oracle(vecs, vecs[44], 3, "exact")[0] == (44, 0.0)

    def test_bad_mode(self, quiet_world):
        _, _, _, _, vecs = quiet_world
        with pytest.raises(ValidationError):
            harness.linear_scan_oracle(vecs, vecs[0], 3, "psychic")
        with pytest.raises(ValidationError):
            harness.linear_scan_oracle(vecs, vecs[0], 3, "plaintext")


class TestOpCounts:
    """Encrypted work grows with the access percentage."""

    def test_monotone(self, quiet_world):
        records, state, ef, ksk, _ = quiet_world
        ops = harness.op_counts(state, ef, ksk, records[:5], (2.5, 10, 25, 50, 100))
        vals = list(ops.values())
        assert all(a < b for a, b in zip(vals, vals[1:]))


@pytest.fixture(scope="module")
def report():
    recs = harness.generate_corpus(120, 8, "tiny")
    grid = harness.SweepGrid(ap=(100.0, 10.0), pca=(8,))
    return harness.sweep(recs, grid, 8, n_queries=6, setup_kw={"noise": False})


class TestSweep:
    """Parameter sweeps."""

    def test_rows(self, report):
        assert [r["ap_percent"] for r in report.rows] == [100.0, 10.0]
        assert report.rows[0]["encrypted_ops"] > report.rows[1]["encrypted_ops"]
        assert all(0 <= r["mean_recall"] <= 1 for r in report.rows)

    def test_csv_deterministic(self, report):
        recs = harness.generate_corpus(120, 8, "tiny")
        again = harness.sweep(recs, harness.SweepGrid(ap=(100.0, 10.0), pca=(8,)), 8, n_queries=6, setup_kw={"noise": False})
        assert again.to_csv() == report.to_csv()
        assert "wall_seconds" in report.timings_csv() and "wall_seconds" not in report.to_csv()

    def test_summary(self, report):
        assert len(report.summary().splitlines()) == 3


class TestSketchTradeoff:
    """Longer sketches give smaller distance error."""

    def test_error_falls_with_alpha(self):
        rows = harness.sketch_tradeoff(40, (0.5, 4.0), (100,), 60, 0)
        assert rows[0]["m_hat"] < rows[1]["m_hat"]
        assert rows[1]["mean_rel_error"] < rows[0]["mean_rel_error"]
