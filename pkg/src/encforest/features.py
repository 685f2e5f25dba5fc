"""Feature preprocessing: normalization, PCA, quantization and JL sketching.

Each image arrives as seven real feature parts. Six of them (rgb, hsv, g, gq
and PCA-reduced h, hq) are compared under L1; lab is compared under KL
divergence. The L1 side is quantized to integers in ``[0, beta]``, expanded to
unary so that L1 distance becomes squared Euclidean distance, and sketched with
a random sign projection so the expanded length drops from ``m * beta`` to
``m_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError, ValidationError

PART_NAMES = ("rgb", "hsv", "lab", "g", "gq", "h", "hq")
L1_PARTS = ("rgb", "hsv", "g", "gq", "h", "hq")
PCA_PARTS = ("h", "hq")

NOMINAL_DIMS = {"rgb": 256, "hsv": 256, "lab": 256, "g": 48, "gq": 48, "h": 4096, "hq": 4096}

QUANT_SCALE = 500
BETA = 999
PROJ_SCALE = 16
KL_SCALE = 10_000


@dataclass(frozen=True)
class FeatureConfig:
    """Part dimensions plus the quantization and sketching constants."""

    dims: dict = field(default_factory=lambda: dict(NOMINAL_DIMS))
    pca_strength: int = 32
    alpha: float = 1.0
    gamma: float = 100.0
    quant_scale: int = QUANT_SCALE
    beta: int = BETA
    proj_scale: int = PROJ_SCALE
    kl_scale: int = KL_SCALE

    def __post_init__(self):
        if set(self.dims) != set(PART_NAMES):
            raise ValidationError(f"feature dims must name exactly {PART_NAMES}")
        if any(int(d) < 1 for d in self.dims.values()):
            raise ValidationError("feature dims must be positive")
        if self.pca_strength < 1 or self.alpha <= 0 or self.gamma <= 1 or self.beta < 1:
            raise ValidationError("need pca_strength >= 1, alpha > 0, gamma > 1, beta >= 1")

    def reduced_dim(self, part: str) -> int:
        d = int(self.dims[part])
        return max(1, d // self.pca_strength) if part in PCA_PARTS else d

    @property
    def m_l1(self) -> int:
        return sum(self.reduced_dim(p) for p in L1_PARTS)

    @property
    def m_kl(self) -> int:
        return int(self.dims["lab"])

    @property
    def m_hat(self) -> int:
        return sketch_dim(self.m_l1, self.alpha, self.gamma, self.beta)

    @property
    def split_dim(self) -> int:
        return self.m_l1 + self.m_kl

    @property
    def l1_scale(self) -> int:
        """Squared sketch distance per unit of real L1 distance."""
        return self.quant_scale * self.proj_scale**2

    def to_dict(self) -> dict:
        return {
            "dims": {p: int(self.dims[p]) for p in PART_NAMES},
            "pca_strength": self.pca_strength,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "quant_scale": self.quant_scale,
            "beta": self.beta,
            "proj_scale": self.proj_scale,
            "kl_scale": self.kl_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FeatureConfig:
        return cls(**{**d, "dims": dict(d["dims"])})


def sketch_dim(m: int, alpha: float, gamma: float, beta: int = BETA) -> int:
    """``alpha * m * log_gamma(beta + 1)`` rounded to an integer."""
    return max(1, int(round(alpha * m * math.log(beta + 1) / math.log(gamma))))


@dataclass(frozen=True)
class FeatureBundle:
    parts: dict

    def __post_init__(self):
        missing = set(PART_NAMES) - set(self.parts)
        if missing:
            raise ValidationError(f"feature bundle missing parts {sorted(missing)}")
        for name in PART_NAMES:
            a = np.asarray(self.parts[name], dtype=np.float64)
            if a.ndim != 1 or not np.all(np.isfinite(a)):
                raise ValidationError(f"part {name} must be a finite 1-D vector")
            self.parts[name] = a

    def __getitem__(self, name: str) -> np.ndarray:
        return self.parts[name]


@dataclass(frozen=True)
class NormalizedFeature:
    v_l1: np.ndarray
    v_kl: np.ndarray


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Per-part mean and orthonormal axes (rows), plus variance bookkeeping."""

    means: dict
    axes: dict
    retained: dict
    total: dict

    def retained_fraction(self, part: str) -> float:
        return float(self.retained[part] / self.total[part]) if self.total[part] > 0 else 1.0

    def transform(self, part: str, x: np.ndarray) -> np.ndarray:
        return self.axes[part] @ (x - self.means[part])

    def to_arrays(self) -> dict:
        out = {}
        for p in self.means:
            out[f"{p}_mean"] = self.means[p]
            out[f"{p}_axes"] = self.axes[p]
            out[f"{p}_var"] = np.array([self.retained[p], self.total[p]])
        return out

    @classmethod
    def from_arrays(cls, arrs) -> PcaModel:
        parts = [k[: -len("_mean")] for k in arrs if k.endswith("_mean")]
        return cls(
            {p: np.asarray(arrs[f"{p}_mean"]) for p in parts},
            {p: np.asarray(arrs[f"{p}_axes"]) for p in parts},
            {p: float(arrs[f"{p}_var"][0]) for p in parts},
            {p: float(arrs[f"{p}_var"][1]) for p in parts},
        )


def _principal_axes(x: np.ndarray, k: int) -> tuple[np.ndarray, float, float]:
    n, d = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2 / max(n - 1, 1)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
    axes = vt[: min(k, rank)]
    if axes.shape[0] < k:
        # too few samples for k directions: complete with an orthonormal basis
        # of the orthogonal complement, taken from the coordinate axes
        basis = np.concatenate([axes, np.eye(d)], axis=0).T
        qmat, _ = np.linalg.qr(basis)
        axes = qmat[:, :k].T
    # deterministic orientation: largest-magnitude entry positive
    idx = np.argmax(np.abs(axes), axis=1)
    signs = np.sign(axes[np.arange(k), idx])
    signs[signs == 0] = 1
    axes = axes * signs[:, None]
    return axes, float(var[:k].sum()), float(var.sum())


def fit_pca(bundles: list[FeatureBundle], config: FeatureConfig) -> PcaModel:
    """Fit principal axes for the texture parts on the ingested corpus."""
    if not bundles:
        raise ValidationError("cannot fit PCA on an empty corpus")
    means, axes, retained, total = {}, {}, {}, {}
    for part in PCA_PARTS:
        x = np.stack([b[part] for b in bundles])
        if x.shape[1] != config.dims[part]:
            raise DimensionMismatchError(f"part {part} has dim {x.shape[1]}, expected {config.dims[part]}")
        k = config.reduced_dim(part)
        means[part] = x.mean(axis=0)
        axes[part], retained[part], total[part] = _principal_axes(x, k)
    return PcaModel(means, axes, retained, total)


def _l1_normalize(v: np.ndarray, name: str) -> np.ndarray:
    norm = np.abs(v).sum()
    if norm == 0:
        raise DegenerateInputError(f"feature part {name} has zero L1 norm")
    return v / norm


def preprocess(bundle: FeatureBundle, pca: PcaModel, config: FeatureConfig) -> NormalizedFeature:
    """L1-normalize and shift the six L1 parts; L1-normalize lab."""
    for part in PART_NAMES:
        if bundle[part].shape[0] != config.dims[part]:
            raise DimensionMismatchError(
                f"part {part} has dim {bundle[part].shape[0]}, expected {config.dims[part]}"
            )
    pieces = []
    for part in L1_PARTS:
        v = pca.transform(part, bundle[part]) if part in PCA_PARTS else bundle[part]
        pieces.append(_l1_normalize(v, part) + 1.0)
    lab = bundle["lab"]
    if np.any(lab < 0):
        raise ValidationError("lab part must be non-negative")
    return NormalizedFeature(np.concatenate(pieces), _l1_normalize(lab, "lab"))


def l1_distance(a: NormalizedFeature, b: NormalizedFeature) -> float:
    return float(np.abs(a.v_l1 - b.v_l1).sum())


def kl_divergence(v: np.ndarray, c: np.ndarray) -> float:
    """Sum of ``v log(v/c)`` with zero coordinates on either side contributing 0."""
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    ok = (v > 0) & (c > 0)
    return float(np.sum(v[ok] * np.log(v[ok] / c[ok])))


# -- L1 side: quantize, unary expansion, sign sketch ---------------------------

def quantize_l1(v_l1: np.ndarray, config: FeatureConfig) -> np.ndarray:
    return np.clip(np.rint(config.quant_scale * np.asarray(v_l1)), 0, config.beta).astype(np.int64)


def binary_expand(v, beta: int) -> np.ndarray:
    """Unary code: coordinate ``v_j`` becomes ``v_j`` ones followed by zeros."""
    v = np.asarray(v, dtype=np.int64)
    if np.any(v < 0) or np.any(v > beta):
        raise ValidationError(f"entries must lie in [0, {beta}]")
    return (np.arange(beta)[None, :] < v[:, None]).astype(np.uint8).reshape(-1)


class JlProjection:
    """Dense random sign sketch of the unary expansion, generated blockwise.

    Block ``j`` is the ``(beta, m_hat)`` sign matrix acting on the unary code of
    coordinate ``j``; it is derived from ``(seed, j)`` so no full matrix is ever
    stored. Prefix sums over a block turn the unary product into a table lookup.
    """

    def __init__(self, seed: int, m: int, beta: int, m_hat: int, proj_scale: int = PROJ_SCALE, cache_limit: int = 1 << 25):
        self.seed = int(seed)
        self.m = int(m)
        self.beta = int(beta)
        self.m_hat = int(m_hat)
        self.proj_scale = int(proj_scale)
        self._norm = math.sqrt(self.m_hat)
        self._tables = None
        if self.m * (self.beta + 1) * self.m_hat <= cache_limit:
            self._tables = np.stack([self._prefix(j) for j in range(self.m)])

    def sign_block(self, j: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, j])
        nbits = self.beta * self.m_hat
        bits = np.unpackbits(np.frombuffer(rng.bytes((nbits + 7) // 8), dtype=np.uint8))[:nbits]
        return (2 * bits.astype(np.int16) - 1).reshape(self.beta, self.m_hat)

    def _prefix(self, j: int) -> np.ndarray:
        out = np.zeros((self.beta + 1, self.m_hat), dtype=np.int16)
        np.cumsum(self.sign_block(j), axis=0, out=out[1:])
        return out

    def matrix(self) -> np.ndarray:
        """Full ``(m_hat, m * beta)`` matrix of integer signs (unscaled)."""
        return np.concatenate([self.sign_block(j) for j in range(self.m)], axis=0).T

    def hyperplane_coordinate(self, j: int) -> int:
        """Sketch coordinate most driven by input coordinate ``j``."""
        return int(np.argmax(np.abs(self.sign_block(j).sum(axis=0, dtype=np.int64))))

    def _finish(self, sums: np.ndarray) -> np.ndarray:
        return np.rint(self.proj_scale * sums / self._norm).astype(np.int64)

    def project_many(self, xs: np.ndarray) -> np.ndarray:
        """Sketch quantized vectors ``xs`` of shape (n, m) without expanding them."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
        if xs.shape[1] != self.m:
            raise DimensionMismatchError(f"expected {self.m} coordinates, got {xs.shape[1]}")
        if np.any(xs < 0) or np.any(xs > self.beta):
            raise ValidationError(f"entries must lie in [0, {self.beta}]")
        sums = np.zeros((xs.shape[0], self.m_hat), dtype=np.int64)
        for j in range(self.m):
            table = self._tables[j] if self._tables is not None else self._prefix(j)
            sums += table[xs[:, j]]
        return self._finish(sums)

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.project_many(np.asarray(x)[None, :])[0]

    def project_expanded(self, expanded: np.ndarray) -> np.ndarray:
        """Same sketch computed as an explicit matrix product on the unary code."""
        expanded = np.asarray(expanded, dtype=np.int64)
        if expanded.shape != (self.m * self.beta,):
            raise DimensionMismatchError(f"expected expansion of length {self.m * self.beta}")
        sums = np.zeros(self.m_hat, dtype=np.int64)
        for j in range(self.m):
            seg = expanded[j * self.beta : (j + 1) * self.beta]
            sums += seg @ self.sign_block(j).astype(np.int64)
        return self._finish(sums)


def jl_project(expanded: np.ndarray, proj: JlProjection) -> np.ndarray:
    return proj.project_expanded(expanded)


# -- KL side: fixed point -------------------------------------------------------

def kl_node_terms(v_kl: np.ndarray, scale: int = KL_SCALE) -> tuple[np.ndarray, np.ndarray]:
    """``round(Q v)`` and ``round(Q v log v)`` with the log term 0 where ``v = 0``."""
    v = np.asarray(v_kl, dtype=np.float64)
    logs = np.zeros_like(v)
    pos = v > 0
    logs[pos] = np.log(v[pos])
    return np.rint(scale * v).astype(np.int64), np.rint(scale * v * logs).astype(np.int64)


def kl_request_terms(c_kl: np.ndarray, scale: int = KL_SCALE) -> tuple[np.ndarray, np.ndarray]:
    """``round(-Q log c)`` and the nonzero mask of ``c``."""
    c = np.asarray(c_kl, dtype=np.float64)
    mask = c > 0
    lq = np.zeros(c.shape, dtype=np.int64)
    lq[mask] = np.rint(-scale * np.log(c[mask])).astype(np.int64)
    return lq, mask.astype(np.int64)


def kl_fixed_point(a: np.ndarray, b: np.ndarray, lq: np.ndarray, mask: np.ndarray, scale: int = KL_SCALE) -> int:
    """Integer ``K`` with ``K / scale**2`` approximating KL(node || request)."""
    return int(np.dot(a, lq) + scale * np.dot(b, mask))


# -- split space ----------------------------------------------------------------

def split_space(x_l1: np.ndarray, a_kl: np.ndarray) -> np.ndarray:
    """Non-negative integer coordinates the trees split on (quantized L1 then KL mass)."""
    return np.concatenate([np.asarray(x_l1, dtype=np.int64), np.asarray(a_kl, dtype=np.int64)])


def split_fields(plan) -> list[int]:
    """Sorted distinct split dimensions from ``(tree, node, dim)`` triples."""
    return sorted({int(dim) for _, _, dim in plan})


@dataclass(frozen=True, eq=False)
class PreparedVector:
    """Everything derived from one bundle that the crypto layer needs."""

    normalized: NormalizedFeature
    x: np.ndarray
    v_hat: np.ndarray
    kl_a: np.ndarray
    kl_b: np.ndarray
    kl_lq: np.ndarray
    kl_mask: np.ndarray

    @property
    def split_values(self) -> np.ndarray:
        return split_space(self.x, self.kl_a)


def prepare_many(norms: list[NormalizedFeature], proj: JlProjection, config: FeatureConfig) -> list[PreparedVector]:
    xs = np.stack([quantize_l1(n.v_l1, config) for n in norms])
    v_hats = proj.project_many(xs)
    out = []
    for n, x, vh in zip(norms, xs, v_hats):
        a, b = kl_node_terms(n.v_kl, config.kl_scale)
        lq, mask = kl_request_terms(n.v_kl, config.kl_scale)
        out.append(PreparedVector(n, x, vh, a, b, lq, mask))
    return out


def approx_distance(node: PreparedVector, req: PreparedVector, config: FeatureConfig) -> float:
    """Distance on the integer representations: sketch L1 plus fixed-point KL."""
    d_l1 = float(np.sum((node.v_hat - req.v_hat) ** 2)) / config.l1_scale
    k = kl_fixed_point(node.kl_a, node.kl_b, req.kl_lq, req.kl_mask, config.kl_scale)
    return d_l1 + k / config.kl_scale**2
