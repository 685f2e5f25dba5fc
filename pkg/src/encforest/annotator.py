"""User and cloud roles: setup, requests, cloud search, recovery, keyword ranking.

The user keeps every secret (IVE keys, OPE key, obfuscation constants, PCA
axes, sketch seed, keyword key) in ``UserState``. The cloud receives the
encrypted forest, the three key-switch matrices and the public IVE parameters.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import threading
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import ive, rkdf
from . import _container as box
from .corpus import Record
from .errors import UnknownRequestError, ValidationError
from .features import (
    FeatureBundle,
    FeatureConfig,
    JlProjection,
    PcaModel,
    PreparedVector,
    fit_pca,
    prepare_many,
    preprocess,
)
from .ope import OpeKey, ope_encrypt
from .secure_compare import (
    CompareKeys,
    CompareParams,
    KeySwitchSet,
    KlRequestCipher,
    L1RequestCipher,
    ObfuscationConfig,
    PreparedRequest,
    PublicParams,
    RequestCiphers,
    encrypt_request,
    kl_node_vector,
    kl_hyper_vector,
    l1_hyper_vector,
    l1_node_vector,
    recover_distance as _recover,
    recovery_tolerance,
)

DEFAULT_TOP_K = 6


@dataclass(frozen=True)
class SetupConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    trees: int = rkdf.DEFAULT_TREES
    queue_size: int = rkdf.DEFAULT_QUEUE
    noise: bool = True
    e_max: int = ive.DEFAULT_E_MAX

    def to_dict(self) -> dict:
        return {
            "features": self.features.to_dict(),
            "trees": self.trees,
            "queue_size": self.queue_size,
            "noise": self.noise,
            "e_max": self.e_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SetupConfig:
        return cls(FeatureConfig.from_dict(d["features"]), d["trees"], d["queue_size"], d["noise"], d["e_max"])


@dataclass(frozen=True)
class LedgerEntry:
    r_s: int
    tolerance: float


@dataclass(eq=False)
class UserState:
    config: SetupConfig
    params: CompareParams
    keys: CompareKeys
    ope_key: OpeKey
    pca: PcaModel
    jl_seed: int
    keyword_key: bytes
    sf: list[int]
    master_seed: int
    request_counter: int = 0
    ledger: dict[str, LedgerEntry] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _proj: JlProjection | None = field(default=None, repr=False)

    @property
    def projection(self) -> JlProjection:
        if self._proj is None:
            fc = self.config.features
            self._proj = JlProjection(self.jl_seed, fc.m_l1, fc.beta, fc.m_hat, fc.proj_scale)
        return self._proj

    def prepare(self, bundles: list[FeatureBundle]) -> list[PreparedVector]:
        fc = self.config.features
        return prepare_many([preprocess(b, self.pca, fc) for b in bundles], self.projection, fc)

    def switch_keys(self) -> KeySwitchSet:
        return self.keys.switch_keys()

    def public(self) -> PublicParams:
        return self.params.public()


# -- keyword sealing ---------------------------------------------------------------

def _nonce(key: bytes, image_id: str) -> bytes:
    return hmac.new(key, b"nonce:" + image_id.encode(), hashlib.sha256).digest()[:12]


def seal_keywords(key: bytes, image_id: str, keywords) -> bytes:
    data = json.dumps(list(keywords), ensure_ascii=False).encode()
    return AESGCM(key).encrypt(_nonce(key, image_id), data, image_id.encode())


def open_keywords(key: bytes, image_id: str, sealed: bytes) -> list[str]:
    data = AESGCM(key).decrypt(_nonce(key, image_id), sealed, image_id.encode())
    return json.loads(data.decode())


# -- setup ----------------------------------------------------------------------

def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def setup(records: list[Record], config: SetupConfig, seed: int):
    """One-time user procedure; returns (state, encrypted forest, key-switch set)."""
    if not records:
        raise ValidationError("empty corpus")
    fc = config.features
    ss = np.random.SeedSequence(seed)
    s_keys, s_obf, s_jl, s_ope, s_kw, s_forest, s_enc = ss.spawn(7)
    obf = ObfuscationConfig.draw(np.random.default_rng(s_obf), noise=config.noise)
    params = CompareParams.build(fc, obf, config.e_max)
    keys = CompareKeys.generate(params, np.random.default_rng(s_keys))
    bundles = [r.bundle for r in records]
    state = UserState(
        config=config,
        params=params,
        keys=keys,
        ope_key=OpeKey(_seed_int(s_ope)),
        pca=fit_pca(bundles, fc),
        jl_seed=_seed_int(s_jl),
        keyword_key=np.random.default_rng(s_kw).bytes(32),
        sf=[],
        master_seed=int(seed),
    )
    vecs = state.prepare(bundles)
    points = np.stack([v.split_values for v in vecs])
    forest = rkdf.build_forest(points, config.trees, np.random.default_rng(s_forest))
    rng = np.random.default_rng(s_enc)
    ef = encrypt_corpus(state, records, vecs, forest, points, rng)
    state.sf = list(ef.sf)
    return state, ef, state.switch_keys()


def hyperplane_coords(split_dim: int, state: UserState) -> tuple[int | None, int | None]:
    """(sketch coordinate, KL coordinate) a hyperplane keeps for a split dim."""
    m_l1 = state.config.features.m_l1
    if split_dim < m_l1:
        return state.projection.hyperplane_coordinate(split_dim), None
    return None, split_dim - m_l1


def encrypt_corpus(state, records, vecs, forest, points, rng) -> rkdf.EncryptedForest:
    p, keys, obf = state.params, state.keys, state.params.obf

    def eps():
        return int(obf.draw_eps(rng))

    l1 = ive.encrypt_many(keys.l1, np.stack([l1_node_vector(v.v_hat, obf.r, eps()) for v in vecs]), p.ive_l1, rng)
    kl = ive.encrypt_many(
        keys.kl, np.stack([kl_node_vector(v.kl_a, v.kl_b, obf.r, eps()) for v in vecs]), p.ive_kl, rng
    )
    images = [
        rkdf.ImageCipher(r.id, c1, c2, seal_keywords(state.keyword_key, r.id, r.keywords))
        for r, c1, c2 in zip(records, l1, kl)
    ]
    hyper = {}
    coord_cache: dict[int, tuple] = {}
    for t, tree in enumerate(forest.trees):
        inner = [(i, n) for i, n in enumerate(tree.nodes) if not n.is_leaf]
        if not inner:
            continue
        hl, hk = [], []
        for _, n in inner:
            if n.split_dim not in coord_cache:
                coord_cache[n.split_dim] = hyperplane_coords(n.split_dim, state)
            cl, ck = coord_cache[n.split_dim]
            v = vecs[n.image]
            hl.append(l1_hyper_vector(v.v_hat, cl, obf.r, eps()))
            hk.append(kl_hyper_vector(v.kl_a, v.kl_b, ck, obf.r, eps()))
        cl1 = ive.encrypt_many(keys.l1h, np.stack(hl), p.ive_l1h, rng)
        ckl = ive.encrypt_many(keys.kl, np.stack(hk), p.ive_kl, rng)
        for (i, _), a, b in zip(inner, cl1, ckl):
            hyper[(t, i)] = (a, b)
    return rkdf.encrypt_forest(
        forest, images, lambda t, i, n: hyper.get((t, i), (None, None)), points, state.ope_key, state.config.queue_size
    )


# -- requests -------------------------------------------------------------------

@dataclass(eq=False)
class AnnotationRequest:
    request_id: str
    ciphers: RequestCiphers
    ope: dict[int, int]


def make_request(state: UserState, bundle: FeatureBundle, r_s: int | None = None) -> AnnotationRequest:
    """Encrypt a query with fresh ``r_s`` and errors; log ``r_s`` in the ledger."""
    vec = state.prepare([bundle])[0]
    with state._lock:
        state.request_counter += 1
        counter = state.request_counter
    rid = f"req-{counter:06d}"
    rng = np.random.default_rng([state.master_seed, 0x5EED, counter])
    obf = state.params.obf
    if r_s is None:
        r_s = obf.draw_rs(rng)
    ciphers = encrypt_request(vec, r_s, state.params, state.keys, rng)
    split = vec.split_values
    ope = {d: ope_encrypt(state.ope_key, int(split[d])) for d in state.sf}
    with state._lock:
        state.ledger[rid] = LedgerEntry(int(r_s), recovery_tolerance(r_s, vec, state.params))
    return AnnotationRequest(rid, ciphers, ope)


# -- cloud ----------------------------------------------------------------------

@dataclass(frozen=True)
class ResultEntry:
    image: int
    image_id: str
    comp: int
    sealed: bytes


@dataclass(eq=False)
class ResultSet:
    request_id: str
    entries: list[ResultEntry]
    ops: int = 0
    visited: int = 0
    transcript: list = field(default_factory=list)


def cloud_annotate(
    ef: rkdf.EncryptedForest,
    req: AnnotationRequest,
    ksk: KeySwitchSet,
    public: PublicParams,
    ap_percent: float = 100.0,
    queue_size: int | None = None,
    **search_kw,
) -> ResultSet:
    prepared = PreparedRequest(req.ciphers, ksk, public)
    ev = rkdf.EncryptedEvaluator(ef, prepared, req.ope)
    queue, st = rkdf.search_encrypted(ef, ev, ap_percent, queue_size, **search_kw)
    entries = [ResultEntry(i, ef.images[i].image_id, comp, ef.images[i].keywords) for comp, i in queue]
    return ResultSet(req.request_id, entries, prepared.ops, len(st.visited), st.transcript)


# -- user-side post-processing ---------------------------------------------------

def _entry(state: UserState, request_id: str) -> LedgerEntry:
    with state._lock:
        entry = state.ledger.get(request_id)
    if entry is None:
        raise UnknownRequestError(request_id)
    return entry


def recover_distance(state: UserState, request_id: str, comp: int) -> float:
    return _recover(comp, _entry(state, request_id).r_s, state.params)


def image_weights(distances) -> list[float]:
    """``1 - Dis_i / sum(Dis)``; uniform 1 for a single result or zero total."""
    d = [max(0.0, float(x)) for x in distances]
    total = sum(d)
    if len(d) <= 1 or total <= 0:
        return [1.0] * len(d)
    return [1.0 - x / total for x in d]


def rank_keywords(distances, keyword_lists) -> list[tuple[str, float]]:
    """Keyword weight is the sum of weights of images carrying it."""
    totals: dict[str, float] = {}
    for w, kws in zip(image_weights(distances), keyword_lists):
        for k in dict.fromkeys(kws):
            totals[k] = totals.get(k, 0.0) + w
    return sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))


def select_keywords(state: UserState, results: ResultSet, top_k: int | None = None) -> list[tuple[str, float]]:
    """Recover distances, rank keywords, and retire the request from the ledger."""
    if not results.entries:
        raise ValidationError("empty result set")
    entry = _entry(state, results.request_id)
    dists = [_recover(e.comp, entry.r_s, state.params) for e in results.entries]
    kws = [open_keywords(state.keyword_key, e.image_id, e.sealed) for e in results.entries]
    ranked = rank_keywords(dists, kws)
    with state._lock:
        state.ledger.pop(results.request_id, None)
    return ranked[:top_k] if top_k else ranked


# -- files ----------------------------------------------------------------------

def dump_state(state: UserState) -> bytes:
    meta = {
        "config": state.config.to_dict(),
        "obf": {"r": state.params.obf.r, "eps_max": state.params.obf.eps_max, "r_req_min": state.params.obf.r_req_min},
        "ope_seed": state.ope_key.seed,
        "jl_seed": state.jl_seed,
        "sf": state.sf,
        "master_seed": state.master_seed,
        "request_counter": state.request_counter,
        "ledger": {k: [v.r_s, v.tolerance] for k, v in sorted(state.ledger.items())},
    }
    sections = {"meta": box.json_bytes(meta), "keyword_key": state.keyword_key}
    for name in ("l1", "l1h", "kl", "req_l1", "req_l1h", "req_kl"):
        sections[f"key_{name}"] = ive.dumps(getattr(state.keys, name))
    for name, arr in sorted(state.pca.to_arrays().items()):
        sections[f"pca_{name}"] = box.array_bytes(arr)
    return box.pack(b"ENUS", sections)


def load_state(buf: bytes) -> UserState:
    s = box.unpack(b"ENUS", buf)
    meta = box.bytes_json(s["meta"])
    config = SetupConfig.from_dict(meta["config"])
    obf = ObfuscationConfig(**meta["obf"])
    params = CompareParams.build(config.features, obf, config.e_max)
    keys = CompareKeys(*(ive.loads(s[f"key_{n}"]) for n in ("l1", "l1h", "kl", "req_l1", "req_l1h", "req_kl")))
    pca = PcaModel.from_arrays({k[4:]: box.bytes_array(v) for k, v in s.items() if k.startswith("pca_")})
    return UserState(
        config=config,
        params=params,
        keys=keys,
        ope_key=OpeKey(meta["ope_seed"]),
        pca=pca,
        jl_seed=meta["jl_seed"],
        keyword_key=s["keyword_key"],
        sf=list(meta["sf"]),
        master_seed=meta["master_seed"],
        request_counter=meta["request_counter"],
        ledger={k: LedgerEntry(int(v[0]), float(v[1])) for k, v in meta["ledger"].items()},
    )


def dump_cloud_keys(ksk: KeySwitchSet, public: PublicParams) -> bytes:
    pub = {
        name: {"moduli": list(p.moduli), "p": p.p, "w": p.w, "e_max": p.e_max, "dim_max": p.dim_max}
        for name, p in (("l1", public.ive_l1), ("l1h", public.ive_l1h), ("kl", public.ive_kl))
    }
    return box.pack(
        b"ENCK",
        {"params": box.json_bytes(pub), "l1": ive.dumps(ksk.l1), "l1h": ive.dumps(ksk.l1h), "kl": ive.dumps(ksk.kl)},
    )


def load_cloud_keys(buf: bytes) -> tuple[KeySwitchSet, PublicParams]:
    s = box.unpack(b"ENCK", buf)
    pub = box.bytes_json(s["params"])

    def params(d):
        return ive.IveParams(tuple(d["moduli"]), d["p"], d["w"], d["e_max"], d["dim_max"])

    return (
        KeySwitchSet(ive.loads(s["l1"]), ive.loads(s["l1h"]), ive.loads(s["kl"])),
        PublicParams(params(pub["l1"]), params(pub["l1h"]), params(pub["kl"])),
    )


def dump_request(req: AnnotationRequest) -> bytes:
    c = req.ciphers
    return box.pack(
        b"ENRQ",
        {
            "id": req.request_id.encode(),
            "ope": box.json_bytes({str(k): v for k, v in sorted(req.ope.items())}),
            "l1": ive.dumps(c.l1.cv),
            "l1h": ive.dumps(c.l1.ch),
            "kl": ive.dumps(c.kl.cv),
        },
    )


def load_request(buf: bytes) -> AnnotationRequest:
    s = box.unpack(b"ENRQ", buf)
    ciphers = RequestCiphers(
        L1RequestCipher(ive.loads(s["l1"]), ive.loads(s["l1h"])), KlRequestCipher(ive.loads(s["kl"]))
    )
    ope = {int(k): int(v) for k, v in box.bytes_json(s["ope"]).items()}
    return AnnotationRequest(s["id"].decode(), ciphers, ope)


def dump_results(res: ResultSet) -> bytes:
    entries = [
        {"image": e.image, "id": e.image_id, "comp": str(e.comp), "sealed": e.sealed.hex()} for e in res.entries
    ]
    meta = {"request_id": res.request_id, "ops": res.ops, "visited": res.visited, "entries": entries}
    return box.pack(b"ENRS", {"results": box.json_bytes(meta)})


def load_results(buf: bytes) -> ResultSet:
    meta = box.bytes_json(box.unpack(b"ENRS", buf)["results"])
    entries = [ResultEntry(e["image"], e["id"], int(e["comp"]), bytes.fromhex(e["sealed"])) for e in meta["entries"]]
    return ResultSet(meta["request_id"], entries, meta["ops"], meta["visited"])
