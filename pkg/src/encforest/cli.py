"""Command-line interface.

Artifacts live in one output directory: ``state.bin`` (user secrets),
``forest.rkdf`` and ``cloud.bin`` (what the cloud holds), plus request,
result and report files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import annotator, harness, rkdf
from .corpus import corpus_dims, dump_jsonl, load_jsonl
from .errors import EncforestError, OracleMismatchError, ValidationError
from .features import FeatureConfig

log = logging.getLogger("encforest")

STATE, FOREST, CLOUD = "state.bin", "forest.rkdf", "cloud.bin"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ap", type=float, default=100.0, help="approximation power in percent")
    p.add_argument("--pca", type=int, default=None, help="PCA strength X (texture dims / X)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=100.0)
    p.add_argument("--trees", type=int, default=rkdf.DEFAULT_TREES)
    p.add_argument("--queue-size", type=int, default=rkdf.DEFAULT_QUEUE)
    p.add_argument("--noise", choices=("on", "off"), default="on")
    p.add_argument("--corpus", type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="encforest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic JSON-lines corpus")
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--profile", choices=sorted(harness.PROFILES), default="tiny")
    g.add_argument("--clusters", type=int, default=None)

    sub.add_parser("setup", parents=[common], help="build and encrypt the forest")

    r = sub.add_parser("request", parents=[common], help="encrypt a query image")
    r.add_argument("--query-id", required=True, help="id of the corpus record to use as the query")

    a = sub.add_parser("annotate", parents=[common], help="cloud-side encrypted search")
    a.add_argument("--request", type=Path, required=True)
    a.add_argument("--threaded", action="store_true")

    rc = sub.add_parser("recover", parents=[common], help="recover distances and rank keywords")
    rc.add_argument("--results", type=Path, required=True)
    rc.add_argument("--top-k", type=int, default=annotator.DEFAULT_TOP_K)

    e = sub.add_parser("eval", parents=[common], help="self-queries with oracle checks and recall")
    e.add_argument("--queries", type=int, default=20)

    s = sub.add_parser("sweep", parents=[common], help="recall / op-count sweep over a grid")
    s.add_argument("--ap-grid", type=_floats, default=(100.0, 50.0, 10.0, 2.5))
    s.add_argument("--pca-grid", type=_ints, default=None)
    s.add_argument("--alpha-grid", type=_floats, default=None)
    s.add_argument("--gamma-grid", type=_floats, default=None)
    s.add_argument("--profile", choices=sorted(harness.PROFILES), default="tiny")
    s.add_argument("--queries", type=int, default=20)

    b = sub.add_parser("bench", parents=[common], help="encrypted-op counts across approximation powers")
    b.add_argument("--ap-grid", type=_floats, default=(2.5, 10.0, 25.0, 50.0, 100.0))
    b.add_argument("--queries", type=int, default=10)
    b.add_argument("--per-tree-budget", action="store_true")
    return parser


def _need_corpus(args):
    if args.corpus is None:
        raise ValidationError("--corpus is required")
    return load_jsonl(args.corpus)


def _feature_config(args, records) -> FeatureConfig:
    dims = corpus_dims(records)
    pca = args.pca or (32 if dims["h"] >= 1024 else 8)
    return FeatureConfig(dims=dims, pca_strength=pca, alpha=args.alpha, gamma=args.gamma)


def _setup_config(args, records) -> annotator.SetupConfig:
    return annotator.SetupConfig(
        features=_feature_config(args, records), trees=args.trees, queue_size=args.queue_size, noise=args.noise == "on"
    )


def _load_user(out: Path) -> annotator.UserState:
    return annotator.load_state((out / STATE).read_bytes())


def _load_cloud(out: Path):
    ef = rkdf.loads((out / FOREST).read_bytes())
    ksk, public = annotator.load_cloud_keys((out / CLOUD).read_bytes())
    return ef, ksk, public


def _write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        path.write_text(data, encoding="utf-8")
    else:
        path.write_bytes(data)
    log.info("wrote %s", path)


def cmd_gen(args) -> int:
    recs = harness.generate_corpus(args.n, args.seed, args.profile, args.clusters)
    path = args.corpus or args.out / "corpus.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_jsonl(recs, path)
    print(path)
    return 0


def cmd_setup(args) -> int:
    records = _need_corpus(args)
    state, ef, ksk = annotator.setup(records, _setup_config(args, records), args.seed)
    _write(args.out / STATE, annotator.dump_state(state))
    _write(args.out / FOREST, rkdf.dumps(ef))
    _write(args.out / CLOUD, annotator.dump_cloud_keys(ksk, state.public()))
    print(json.dumps({"images": ef.n_images, "trees": len(ef.trees), "split_fields": len(ef.sf)}))
    return 0


def cmd_request(args) -> int:
    records = {r.id: r for r in _need_corpus(args)}
    if args.query_id not in records:
        raise ValidationError(f"no record with id {args.query_id!r}")
    state = _load_user(args.out)
    req = annotator.make_request(state, records[args.query_id].bundle)
    _write(args.out / f"{req.request_id}.req", annotator.dump_request(req))
    _write(args.out / STATE, annotator.dump_state(state))
    print(req.request_id)
    return 0


def cmd_annotate(args) -> int:
    ef, ksk, public = _load_cloud(args.out)
    req = annotator.load_request(args.request.read_bytes())
    res = annotator.cloud_annotate(ef, req, ksk, public, args.ap, args.queue_size, threaded=args.threaded)
    _write(args.out / f"{req.request_id}.res", annotator.dump_results(res))
    print(json.dumps({"request": req.request_id, "results": len(res.entries), "ops": res.ops, "visited": res.visited}))
    return 0


def cmd_recover(args) -> int:
    state = _load_user(args.out)
    res = annotator.load_results(args.results.read_bytes())
    dists = [annotator.recover_distance(state, res.request_id, e.comp) for e in res.entries]
    ranked = annotator.select_keywords(state, res)
    report = {
        "request": res.request_id,
        "neighbors": [{"id": e.image_id, "distance": round(d, 9)} for e, d in zip(res.entries, dists)],
        "keywords": [{"keyword": k, "weight": round(w, 9)} for k, w in ranked],
        "selected": [k for k, _ in ranked[: args.top_k]],
    }
    _write(args.out / f"{res.request_id}.keywords.json", json.dumps(report, indent=2) + "\n")
    _write(args.out / STATE, annotator.dump_state(state))
    print(json.dumps(report["selected"]))
    return 0


def cmd_eval(args) -> int:
    records = _need_corpus(args)
    state = _load_user(args.out)
    ef, ksk, public = _load_cloud(args.out)
    n_q = min(args.queries, len(records))
    idx = np.sort(np.random.default_rng(args.seed).choice(len(records), size=n_q, replace=False))
    vecs = state.prepare([r.bundle for r in records])
    preds, truth, rows, mismatches = [], [], [], 0
    exact_expected = state.params.obf.eps_max == 0 and args.ap >= 100
    for qi in idx:
        q = records[qi]
        req = annotator.make_request(state, q.bundle)
        res = annotator.cloud_annotate(ef, req, ksk, public, args.ap, args.queue_size)
        oracle = harness.linear_scan_oracle(vecs, vecs[qi], args.queue_size, params=state.params)
        got = [e.image for e in res.entries]
        bad_set = exact_expected and set(got) != {i for i, _ in oracle}
        oracle_d = {i: d for i, d in harness.linear_scan_oracle(vecs, vecs[qi], len(vecs), params=state.params)}
        worst = max(
            abs(annotator.recover_distance(state, req.request_id, e.comp) - oracle_d[e.image]) for e in res.entries
        )
        # against the fixed-point oracle only the obfuscation noise remains
        noise_tol = 3 * state.params.obf.eps_max / (state.ledger[req.request_id].r_s * state.params.scale) + 1e-9
        bad_rec = worst > noise_tol
        mismatches += bad_set or bad_rec
        ranked = annotator.select_keywords(state, res, annotator.DEFAULT_TOP_K)
        preds.append([k for k, _ in ranked])
        truth.append(list(q.keywords))
        rows.append(f"{q.id},{res.ops},{res.visited},{int(bad_set)},{worst:.3e},{'|'.join(preds[-1])}")
    recall = harness.eval_recall(preds, truth)
    csv_text = "query,ops,visited,set_mismatch,max_recovery_error,keywords\n" + "\n".join(rows) + "\n"
    _write(args.out / "eval.csv", csv_text)
    summary = {"queries": int(n_q), "ap_percent": args.ap, "recall": round(recall, 6), "oracle_mismatches": int(mismatches)}
    _write(args.out / "eval.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    if mismatches:
        raise OracleMismatchError(f"{mismatches} queries disagreed with the plaintext oracle")
    return 0


def cmd_sweep(args) -> int:
    records = _need_corpus(args) if args.corpus else harness.generate_corpus(500, args.seed, args.profile)
    profile = args.profile
    grid = harness.SweepGrid(
        ap=args.ap_grid,
        pca=args.pca_grid or (args.pca or harness.PROFILES[profile][1],),
        alpha=args.alpha_grid or (args.alpha,),
        gamma=args.gamma_grid or (args.gamma,),
    )
    report = harness.sweep(
        records, grid, args.seed, profile, args.queries,
        setup_kw={"trees": args.trees, "queue_size": args.queue_size, "noise": args.noise == "on"},
    )
    _write(args.out / "sweep.csv", report.to_csv())
    _write(args.out / "sweep_timing.csv", report.timings_csv())
    print(report.summary())
    return 0


def cmd_bench(args) -> int:
    records = _need_corpus(args)
    state = _load_user(args.out)
    ef, ksk, _ = _load_cloud(args.out)
    rng = np.random.default_rng(args.seed)
    queries = [records[i] for i in np.sort(rng.choice(len(records), size=min(args.queries, len(records)), replace=False))]
    counts = harness.op_counts(state, ef, ksk, queries, args.ap_grid, per_tree_budget=args.per_tree_budget)
    oracle = 2 * ef.n_images
    lines = ["ap_percent,encrypted_ops,oracle_ops,speedup"]
    for ap in args.ap_grid:
        ops = counts[float(ap)]
        lines.append(f"{ap:g},{ops:.1f},{oracle},{oracle / ops:.4f}")
    _write(args.out / "bench.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "gen": cmd_gen, "setup": cmd_setup, "request": cmd_request, "annotate": cmd_annotate,
    "recover": cmd_recover, "eval": cmd_eval, "sweep": cmd_sweep, "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except EncforestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
