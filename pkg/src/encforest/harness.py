"""Synthetic corpora, linear-scan oracles, recall, and parameter sweeps."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import annotator, rkdf
from .corpus import Record
from .errors import ValidationError
from .features import (
    NOMINAL_DIMS,
    PART_NAMES,
    FeatureBundle,
    FeatureConfig,
    PreparedVector,
    JlProjection,
    QUANT_SCALE,
    kl_divergence,
    sketch_dim,
)
from .secure_compare import CompareParams, PreparedRequest, distance_key

PROFILES = {
    "nominal": (dict(NOMINAL_DIMS), 32),
    "small": ({"rgb": 32, "hsv": 32, "lab": 32, "g": 16, "gq": 16, "h": 256, "hq": 256}, 32),
    "tiny": ({"rgb": 8, "hsv": 8, "lab": 8, "g": 4, "gq": 4, "h": 32, "hq": 32}, 8),
}
HISTOGRAM_PARTS = ("rgb", "hsv", "lab")
CORE_KEYWORDS = 5
RARE_KEYWORD_PROB = 0.7


def profile_config(profile: str, pca: int | None = None, alpha: float = 1.0, gamma: float = 100.0) -> FeatureConfig:
    if profile not in PROFILES:
        raise ValidationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    dims, default_pca = PROFILES[profile]
    return FeatureConfig(dims=dict(dims), pca_strength=pca or default_pca, alpha=alpha, gamma=gamma)


# -- synthetic corpora -----------------------------------------------------------

def generate_corpus(
    n: int,
    seed: int,
    profile: str = "tiny",
    clusters: int | None = None,
    spread: float = 0.15,
    rare_prob: float = RARE_KEYWORD_PROB,
) -> list[Record]:
    """Gaussian / Dirichlet clusters, each with its own pool of core keywords.

    Every image carries its cluster's five core keywords and, with probability
    ``rare_prob``, one keyword no other image has.
    """
    if n < 1:
        raise ValidationError("corpus size must be positive")
    dims = PROFILES[profile][0] if profile in PROFILES else None
    if dims is None:
        raise ValidationError(f"unknown profile {profile!r}")
    rng = np.random.default_rng(seed)
    k = clusters or max(1, n // 25)
    centers = []
    for _ in range(k):
        c = {}
        for p in PART_NAMES:
            if p in HISTOGRAM_PARTS:
                c[p] = rng.dirichlet(np.full(dims[p], 0.7))
            else:
                c[p] = rng.gamma(2.0, 1.0, size=dims[p])
        centers.append(c)
    labels = np.sort(rng.integers(0, k, size=n)) if k > 1 else np.zeros(n, dtype=int)
    records = []
    for i, c in enumerate(labels):
        center = centers[c]
        parts = {}
        for p in PART_NAMES:
            if p in HISTOGRAM_PARTS:
                parts[p] = rng.dirichlet(center[p] / spread**2 + 1e-3)
            else:
                parts[p] = np.abs(center[p] + rng.normal(0.0, spread, size=dims[p]) * center[p].mean())
        kws = [f"c{c:03d}-k{j}" for j in range(CORE_KEYWORDS)]
        if rng.random() < rare_prob:
            kws.append(f"rare-{i:06d}")
        records.append(Record(f"img{i:06d}", tuple(kws), FeatureBundle(parts)))
    return records


def cluster_of(record: Record) -> str:
    return record.keywords[0].split("-")[0]


# -- oracles ---------------------------------------------------------------------

def exact_distance(node: PreparedVector, req: PreparedVector) -> float:
    """Real-valued L1 over the shifted vectors plus KL over lab."""
    a, b = node.normalized, req.normalized
    return float(np.abs(a.v_l1 - b.v_l1).sum()) + kl_divergence(a.v_kl, b.v_kl)


def linear_scan_oracle(
    corpus: list[PreparedVector],
    query: PreparedVector,
    L: int,
    mode: str = "plaintext",
    params: CompareParams | None = None,
    ef: rkdf.EncryptedForest | None = None,
    prepared: PreparedRequest | None = None,
) -> list[tuple[int, float]]:
    """Brute-force top-L as (index, value) pairs, ties to the lower index.

    ``plaintext`` ranks by the integer sketch / fixed-point distance the
    encrypted pipeline realizes and reports it in distance units; ``exact``
    uses real-valued L1 + KL; ``encrypted`` evaluates Comp for every record.
    """
    if mode == "plaintext":
        if params is None:
            raise ValidationError("plaintext mode needs comparison params")
        keys = [(distance_key(v, query, params), i) for i, v in enumerate(corpus)]
        return [(i, k / params.scale) for k, i in sorted(keys)[:L]]
    if mode == "exact":
        vals = sorted((exact_distance(v, query), i) for i, v in enumerate(corpus))
        return [(i, d) for d, i in vals[:L]]
    if mode == "encrypted":
        if ef is None or prepared is None:
            raise ValidationError("encrypted mode needs the forest and a prepared request")
        comps = sorted((prepared.comp_node(img.l1, img.kl), i) for i, img in enumerate(ef.images))
        return [(i, c) for c, i in comps[:L]]
    raise ValidationError(f"unknown oracle mode {mode!r}")


# -- metrics ---------------------------------------------------------------------

def eval_recall(predicted: list, truth: list) -> float:
    """Mean over ground-truth keywords of the fraction of their images recovered."""
    if len(predicted) != len(truth):
        raise ValidationError("predicted and ground truth differ in length")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for pred, true in zip(predicted, truth):
        pred = set(pred)
        for k in set(true):
            totals[k] = totals.get(k, 0) + 1
            hits[k] = hits.get(k, 0) + (k in pred)
    if not totals:
        raise ValidationError("empty ground truth")
    return float(np.mean([hits[k] / totals[k] for k in sorted(totals)]))


# -- sweeps ----------------------------------------------------------------------

REPORT_FIELDS = (
    "ap_percent", "pca_strength", "alpha", "gamma", "queries", "mean_recall",
    "encrypted_ops", "oracle_ops", "speedup",
)


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(row[k]) for k in REPORT_FIELDS})
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=("ap_percent", "pca_strength", "alpha", "gamma", "wall_seconds"), lineterminator="\n")
        w.writeheader()
        for row in self.timings:
            w.writerow({k: _fmt(v) for k, v in row.items()})
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'AP':>6} {'PCA':>4} {'alpha':>5} {'gamma':>6} {'recall':>7} {'ops':>10} {'speedup':>8}"]
        for r in self.rows:
            lines.append(
                f"{r['ap_percent']:>6g} {r['pca_strength']:>4d} {r['alpha']:>5g} {r['gamma']:>6g} "
                f"{r['mean_recall']:>7.4f} {r['encrypted_ops']:>10.1f} {r['speedup']:>8.2f}"
            )
        return "\n".join(lines)


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class SweepGrid:
    ap: tuple[float, ...] = (100.0, 50.0, 10.0, 2.5)
    pca: tuple[int, ...] = (8,)
    alpha: tuple[float, ...] = (1.0,)
    gamma: tuple[float, ...] = (100.0,)


def split_queries(records: list[Record], n_queries: int, seed: int) -> tuple[list[Record], list[Record]]:
    """Hold out ``n_queries`` records spread over the corpus."""
    if not 0 < n_queries < len(records):
        raise ValidationError("need 0 < queries < corpus size")
    rng = np.random.default_rng(seed)
    held = set(rng.choice(len(records), size=n_queries, replace=False).tolist())
    corpus = [r for i, r in enumerate(records) if i not in held]
    queries = [r for i, r in enumerate(records) if i in held]
    return corpus, queries


def run_queries(state, ef, ksk, queries: list[Record], ap: float, top_k: int = annotator.DEFAULT_TOP_K, **kw):
    """Returns (predicted keyword lists, total encrypted ops)."""
    public = state.public()
    preds, ops = [], 0
    for q in queries:
        req = annotator.make_request(state, q.bundle)
        res = annotator.cloud_annotate(ef, req, ksk, public, ap, **kw)
        ops += res.ops
        preds.append([k for k, _ in annotator.select_keywords(state, res, top_k)])
    return preds, ops


def sweep(
    records: list[Record],
    grid: SweepGrid,
    seed: int,
    profile: str = "tiny",
    n_queries: int = 20,
    setup_kw: dict | None = None,
    search_kw: dict | None = None,
) -> EvalReport:
    """Recall and op-count speedup for every grid point on held-out queries.

    Ground truth for a query is its keywords that occur somewhere in the
    searchable corpus (a held-out rare keyword cannot be transferred).
    """
    corpus, queries = split_queries(records, n_queries, seed)
    vocab = {k for r in corpus for k in r.keywords}
    truth = [[k for k in q.keywords if k in vocab] for q in queries]
    report = EvalReport()
    for pca in grid.pca:
        for alpha in grid.alpha:
            for gamma in grid.gamma:
                fc = profile_config(profile, pca, alpha, gamma)
                cfg = annotator.SetupConfig(features=fc, **(setup_kw or {}))
                state, ef, ksk = annotator.setup(corpus, cfg, seed)
                for ap in grid.ap:
                    t0 = time.perf_counter()
                    preds, ops = run_queries(state, ef, ksk, queries, ap, **(search_kw or {}))
                    wall = time.perf_counter() - t0
                    enc = ops / len(queries)
                    oracle = 2.0 * len(corpus)
                    report.rows.append({
                        "ap_percent": float(ap), "pca_strength": pca, "alpha": float(alpha), "gamma": float(gamma),
                        "queries": len(queries), "mean_recall": eval_recall(preds, truth),
                        "encrypted_ops": enc, "oracle_ops": oracle, "speedup": oracle / enc if enc else float("inf"),
                    })
                    report.timings.append({
                        "ap_percent": float(ap), "pca_strength": pca, "alpha": float(alpha), "gamma": float(gamma),
                        "wall_seconds": wall,
                    })
    return report


def sketch_tradeoff(m_l1: int, alphas, gammas, n_pairs: int, seed: int, beta: int = 999) -> list[dict]:
    """Mean relative sketch error and sketch length for each (alpha, gamma)."""
    rng = np.random.default_rng(seed)
    xs = np.clip(np.rint(QUANT_SCALE * (1 + rng.dirichlet(np.ones(m_l1), size=2 * n_pairs) * 6)), 0, beta).astype(np.int64)
    true = np.abs(xs[::2] - xs[1::2]).sum(axis=1)
    rows = []
    for gamma in gammas:
        for alpha in alphas:
            m_hat = sketch_dim(m_l1, alpha, gamma, beta)
            proj = JlProjection(seed, m_l1, beta, m_hat)
            v = proj.project_many(xs)
            est = ((v[::2] - v[1::2]) ** 2).sum(axis=1) / proj.proj_scale**2
            err = float(np.mean(np.abs(est - true) / true))
            rows.append({"alpha": float(alpha), "gamma": float(gamma), "m_hat": m_hat, "mean_rel_error": err})
    return rows


def op_counts(state, ef, ksk, queries: list[Record], aps, **kw) -> dict[float, float]:
    """Mean encrypted inner products per query at each approximation power."""
    public = state.public()
    reqs = [annotator.make_request(state, q.bundle) for q in queries]
    out = {}
    for ap in aps:
        total = 0
        for req in reqs:
            total += annotator.cloud_annotate(ef, req, ksk, public, ap, **kw).ops
        out[float(ap)] = total / len(reqs)
    return out

