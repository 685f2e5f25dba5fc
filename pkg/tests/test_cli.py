"""Command-line interface: the full user / cloud round trip and exit codes."""

import json

import pytest

from encforest.cli import main

ARTIFACTS = ("corpus.jsonl", "state.bin", "forest.rkdf", "cloud.bin", "req-000001.req", "req-000001.res",
             "req-000001.keywords.json", "bench.csv")


def run_pipeline(out, seed=3, n=40):
    """gen, setup, request, annotate, recover, bench; returns exit codes."""
    corpus = out / "corpus.jsonl"
    common = ["--seed", str(seed), "--out", str(out), "--corpus", str(corpus), "--trees", "3"]
    codes = [
        main(["gen", "--n", str(n), *common]),
        main(["setup", *common]),
        main(["request", "--query-id", "img000004", *common]),
        main(["annotate", "--request", str(out / "req-000001.req"), *common]),
        main(["recover", "--results", str(out / "req-000001.res"), *common]),
        main(["bench", "--queries", "3", "--ap-grid", "10,100", *common]),
    ]
    return codes


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    return out, run_pipeline(out)


class TestRoundTrip:
    """Each subcommand succeeds and writes its artifact."""

    def test_exit_codes(self, pipeline):
        _, codes = pipeline
        assert codes == [0] * 6

    def test_artifacts(self, pipeline):
        out, _ = pipeline
        for name in ARTIFACTS:
            assert (out / name).stat().st_size > 0

    def test_keywords_report(self, pipeline):
        out, _ = pipeline
        rep = json.loads((out / "req-000001.keywords.json").read_text())
        assert rep["neighbors"][0]["id"] == "img000004"
        assert abs(rep["neighbors"][0]["distance"]) < 1e-3
        assert len(rep["selected"]) == 6

    def test_eval(self, pipeline, capsys):
        out, _ = pipeline
        code = main(["eval", "--queries", "4", "--noise", "off", "--out", str(out), "--corpus", str(out / "corpus.jsonl")])
        assert code == 0
        summary = json.loads((out / "eval.json").read_text())
        assert summary["oracle_mismatches"] == 0

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_pipeline(a, seed=5, n=25)
        run_pipeline(b, seed=5, n=25)
        for name in ARTIFACTS:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestErrors:
    """Failures map to exit codes instead of tracebacks."""

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["setup", "--out", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_query_id(self, pipeline):
        out, _ = pipeline
        assert main(["request", "--query-id", "nope", "--out", str(out), "--corpus", str(out / "corpus.jsonl")]) == 2

    def test_replayed_results(self, pipeline):
        out, _ = pipeline
        # the ledger entry was consumed by the first recover
        assert main(["recover", "--results", str(out / "req-000001.res"), "--out", str(out)]) == 2

    def test_corrupt_forest(self, tmp_path):
        (tmp_path / "forest.rkdf").write_bytes(b"garbage")
        (tmp_path / "cloud.bin").write_bytes(b"garbage")
        (tmp_path / "r.req").write_bytes(b"garbage")
        assert main(["annotate", "--request", str(tmp_path / "r.req"), "--out", str(tmp_path)]) == 2

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["setup", "--noise", "maybe"])
        assert exc.value.code == 2
