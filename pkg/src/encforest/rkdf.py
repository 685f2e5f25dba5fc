"""Randomized kd-forest: build, encrypt, and search over encrypted nodes.

Each tree node holds one image. Search runs every tree as a step generator
over a shared bounded queue and a shared visited set; a round-robin scheduler
advances one tree by one step per turn, which makes transcripts reproducible.
"""

from __future__ import annotations

import bisect
import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol

import numpy as np

from . import ive
from .errors import DimensionMismatchError, ValidationError
from .features import split_fields
from .ope import OpeKey, ope_encrypt

MAGIC = b"RKDF"
VERSION = 1
DEFAULT_TREES = 10
DEFAULT_QUEUE = 10
TOP_VARIANCE_DIMS = 5
NONE = -1


@dataclass
class PlainNode:
    image: int
    split_dim: int | None = None
    split_value: int | None = None
    left: int = NONE
    right: int = NONE

    @property
    def is_leaf(self) -> bool:
        return self.left == NONE and self.right == NONE


@dataclass
class PlainTree:
    nodes: list[PlainNode]  # pre-order, root first

    def images(self) -> list[int]:
        return [n.image for n in self.nodes]


@dataclass
class PlainForest:
    trees: list[PlainTree]
    n_images: int

    def split_plan(self) -> list[tuple[int, int, int]]:
        return [
            (t, i, node.split_dim)
            for t, tree in enumerate(self.trees)
            for i, node in enumerate(tree.nodes)
            if not node.is_leaf
        ]


def _choose_dim(values: np.ndarray, rng: np.random.Generator, top: int) -> int:
    var = values.var(axis=0)
    order = np.argsort(-var, kind="stable")
    candidates = [int(d) for d in order[:top] if var[d] > 0]
    if not candidates:
        return int(order[0])
    return candidates[int(rng.integers(len(candidates)))]


def build_tree(points: np.ndarray, rng: np.random.Generator, top: int = TOP_VARIANCE_DIMS) -> PlainTree:
    """One randomized kd-tree; ``points`` rows are indexed by image number."""
    nodes: list[PlainNode] = []
    stack = [(NONE, "", np.arange(points.shape[0]))]
    while stack:
        parent, side, members = stack.pop()
        idx = len(nodes)
        if parent != NONE:
            setattr(nodes[parent], side, idx)
        if members.size == 1:
            nodes.append(PlainNode(int(members[0])))
            continue
        dim = _choose_dim(points[members], rng, top)
        vals = points[members, dim]
        order = np.lexsort((members, vals))
        pivot = int(members[order[len(order) // 2]])
        pivot_val = int(points[pivot, dim])
        rest = members[members != pivot]
        rest_vals = points[rest, dim]
        left, right = rest[rest_vals <= pivot_val], rest[rest_vals > pivot_val]
        nodes.append(PlainNode(pivot, dim, pivot_val))
        # right pushed first so the left subtree is emitted first (pre-order)
        if right.size:
            stack.append((idx, "right", right))
        if left.size:
            stack.append((idx, "left", left))
    return PlainTree(nodes)


def build_forest(points, num_trees: int, rng, top: int = TOP_VARIANCE_DIMS) -> PlainForest:
    """Trees over integer split-space rows, one image per node."""
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValidationError("cannot build a forest over an empty corpus")
    if num_trees < 1:
        raise ValidationError("need at least one tree")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return PlainForest([build_tree(points, rng, top) for _ in range(num_trees)], points.shape[0])


# -- encrypted forest ------------------------------------------------------------

@dataclass(eq=False)
class ImageCipher:
    """Per-image ciphers shared by every tree node that holds the image."""

    image_id: str
    l1: ive.Ciphertext
    kl: ive.Ciphertext
    keywords: bytes


@dataclass(eq=False)
class EncryptedNode:
    image: int
    split_dim: int | None = None
    ope: int | None = None
    h_l1: ive.Ciphertext | None = None
    h_kl: ive.Ciphertext | None = None
    left: int = NONE
    right: int = NONE

    @property
    def is_leaf(self) -> bool:
        return self.left == NONE and self.right == NONE


@dataclass(eq=False)
class EncryptedForest:
    trees: list[list[EncryptedNode]]
    images: list[ImageCipher]
    sf: list[int]
    queue_size: int = DEFAULT_QUEUE

    @property
    def n_images(self) -> int:
        return len(self.images)


HyperFn = Callable[[int, int, PlainNode], tuple[ive.Ciphertext, ive.Ciphertext]]


def encrypt_forest(
    forest: PlainForest,
    images: list[ImageCipher],
    hyper: HyperFn,
    points: np.ndarray,
    ope_key: OpeKey,
    queue_size: int = DEFAULT_QUEUE,
) -> EncryptedForest:
    """Attach OPE split values and hyperplane ciphers to every non-leaf node.

    ``hyper(tree, index, node)`` returns the node's (L1, KL) hyperplane ciphers.
    """
    if len(images) != forest.n_images:
        raise ValidationError(f"{len(images)} image ciphers for {forest.n_images} images")
    trees = []
    for t, tree in enumerate(forest.trees):
        out = []
        for i, node in enumerate(tree.nodes):
            if node.is_leaf:
                out.append(EncryptedNode(node.image))
                continue
            h_l1, h_kl = hyper(t, i, node)
            if h_l1 is None or h_kl is None:
                raise ValidationError(f"missing hyperplane cipher for tree {t} node {i}")
            ope = ope_encrypt(ope_key, int(points[node.image, node.split_dim]))
            out.append(EncryptedNode(node.image, node.split_dim, ope, h_l1, h_kl, node.left, node.right))
        trees.append(out)
    return EncryptedForest(trees, images, split_fields(forest.split_plan()), queue_size)


# -- search -------------------------------------------------------------------

class Evaluator(Protocol):
    def comp_node(self, image: int) -> int: ...
    def comp_hyper(self, tree: int, index: int) -> int: ...
    def go_left(self, tree: int, index: int) -> bool: ...


class EncryptedEvaluator:
    """Comp values from ciphers; ``ope`` maps split dims to request OPE values."""

    def __init__(self, ef: EncryptedForest, prepared, ope: dict[int, int]):
        missing = set(ef.sf) - set(ope)
        if missing:
            raise DimensionMismatchError(f"request lacks OPE values for split dims {sorted(missing)[:5]}")
        self.ef = ef
        self.prepared = prepared
        self.ope = ope

    @property
    def ops(self) -> int:
        return self.prepared.ops

    def comp_node(self, image: int) -> int:
        img = self.ef.images[image]
        return self.prepared.comp_node(img.l1, img.kl)

    def comp_hyper(self, tree: int, index: int) -> int:
        node = self.ef.trees[tree][index]
        return self.prepared.comp_hyper(node.h_l1, node.h_kl)

    def go_left(self, tree: int, index: int) -> bool:
        node = self.ef.trees[tree][index]
        return self.ope[node.split_dim] <= node.ope


@dataclass
class SearchState:
    capacity: int
    budget: int
    per_tree_budget: bool = False
    queue: list[tuple[int, int]] = field(default_factory=list)
    visited: set[int] = field(default_factory=set)
    transcript: list[tuple] = field(default_factory=list)

    @property
    def full(self) -> bool:
        return len(self.queue) >= self.capacity

    @property
    def worst(self) -> int:
        return self.queue[-1][0]


def queue_push(state: SearchState, image: int, comp: int) -> bool:
    """Insert in order while under capacity, else replace the worst if better.

    Ties on Comp prefer the lower image id. Returns whether the queue changed.
    """
    entry = (comp, image)
    if len(state.queue) < state.capacity:
        bisect.insort(state.queue, entry)
        return True
    if entry < state.queue[-1]:
        state.queue.pop()
        bisect.insort(state.queue, entry)
        return True
    return False


def budget_for(ap_percent: float, n: int) -> int:
    if not 0 < ap_percent <= 100:
        raise ValidationError("ap_percent must lie in (0, 100]")
    return max(1, math.ceil(ap_percent * n / 100 - 1e-9))


def _tree_steps(tree_idx: int, nodes: list, ev: Evaluator, state: SearchState) -> Iterator[None]:
    counter = [0]

    def exhausted() -> bool:
        used = counter[0] if state.per_tree_budget else len(state.visited)
        return used >= state.budget

    def visit(i: int):
        node = nodes[i]
        if node.image in state.visited:
            return
        state.visited.add(node.image)
        counter[0] += 1
        comp = ev.comp_node(node.image)
        changed = queue_push(state, node.image, comp)
        state.transcript.append(("push", tree_idx, node.image, comp, changed))

    def descend(start: int, path: list):
        chain = []
        i = start
        while i != NONE:
            node = nodes[i]
            if node.is_leaf:
                chain.append((i, None))
                break
            left = ev.go_left(tree_idx, i)
            nxt = node.left if left else node.right
            chain.append((i, "left" if left else "right"))
            i = nxt
        path.extend(chain)
        return [i for i, _ in reversed(chain)]

    path: list[tuple[int, str | None]] = []
    for i in descend(0, path):
        if exhausted():
            return
        visit(i)
        yield
    while path:
        if exhausted():
            return
        i, taken = path.pop()
        node = nodes[i]
        if node.image not in state.visited:
            visit(i)
            yield
            if exhausted():
                return
        if taken is None:
            continue
        other = node.right if taken == "left" else node.left
        if other == NONE:
            continue
        if state.full:
            comp_h = ev.comp_hyper(tree_idx, i)
            prune = state.worst < comp_h
            state.transcript.append(("hyper", tree_idx, node.image, comp_h, prune))
            yield
            if prune:
                continue
        for j in descend(other, path):
            if exhausted():
                return
            visit(j)
            yield


def search(
    trees: list[list],
    ev: Evaluator,
    n_images: int,
    ap_percent: float = 100.0,
    L: int = DEFAULT_QUEUE,
    per_tree_budget: bool = False,
    threaded: bool = False,
) -> tuple[list[tuple[int, int]], SearchState]:
    """Shared-queue search over all trees; returns (queue, final state).

    The default scheduler is round-robin, one step per tree per turn.
    """
    if L < 1:
        raise ValidationError("queue size must be >= 1")
    state = SearchState(L, budget_for(ap_percent, n_images), per_tree_budget)
    gens = [_tree_steps(t, nodes, ev, state) for t, nodes in enumerate(trees) if nodes]
    if threaded:
        lock = threading.Lock()

        def run(g):
            while True:
                with lock:
                    if next(g, StopIteration) is StopIteration:
                        return

        workers = [threading.Thread(target=run, args=(g,)) for g in gens]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
    else:
        active = list(gens)
        while active:
            active = [g for g in active if next(g, StopIteration) is not StopIteration]
    return list(state.queue), state


def search_encrypted(ef: EncryptedForest, ev: EncryptedEvaluator, ap_percent: float = 100.0, L: int | None = None, **kw):
    return search(ef.trees, ev, ef.n_images, ap_percent, L or ef.queue_size, **kw)


# -- serialization ---------------------------------------------------------------

def _pack_bytes(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def _unpack_bytes(buf: bytes, off: int) -> tuple[bytes, int]:
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    return bytes(buf[off : off + n]), off + n


def dumps(ef: EncryptedForest) -> bytes:
    out = [MAGIC, struct.pack("<HHHH", VERSION, len(ef.trees), ef.queue_size, 0)]
    out.append(struct.pack(f"<I{len(ef.sf)}I", len(ef.sf), *ef.sf))
    out.append(struct.pack("<I", len(ef.images)))
    for img in ef.images:
        out += [_pack_bytes(img.image_id.encode()), ive.dumps(img.l1), ive.dumps(img.kl), _pack_bytes(img.keywords)]
    for nodes in ef.trees:
        out.append(struct.pack("<I", len(nodes)))
        for n in nodes:
            inner = n.split_dim is not None
            out.append(struct.pack("<IBIQii", n.image, int(inner), n.split_dim or 0, n.ope or 0, n.left, n.right))
            if inner:
                out += [ive.dumps(n.h_l1), ive.dumps(n.h_kl)]
    return b"".join(out)


def loads(buf: bytes) -> EncryptedForest:
    if buf[:4] != MAGIC:
        raise ValidationError("not an encrypted forest file")
    version, ntrees, qsize, _ = struct.unpack_from("<HHHH", buf, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported forest version {version}")
    off = 12
    (nsf,) = struct.unpack_from("<I", buf, off)
    sf = list(struct.unpack_from(f"<{nsf}I", buf, off + 4))
    off += 4 + 4 * nsf
    (nimg,) = struct.unpack_from("<I", buf, off)
    off += 4
    images = []
    for _ in range(nimg):
        name, off = _unpack_bytes(buf, off)
        l1, off = ive.loads_from(buf, off)
        kl, off = ive.loads_from(buf, off)
        kw, off = _unpack_bytes(buf, off)
        images.append(ImageCipher(name.decode(), l1, kl, kw))
    rec = struct.Struct("<IBIQii")
    trees = []
    for _ in range(ntrees):
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        nodes = []
        for _ in range(count):
            image, inner, dim, ope, left, right = rec.unpack_from(buf, off)
            off += rec.size
            if inner:
                h_l1, off = ive.loads_from(buf, off)
                h_kl, off = ive.loads_from(buf, off)
                nodes.append(EncryptedNode(image, dim, ope, h_l1, h_kl, left, right))
            else:
                nodes.append(EncryptedNode(image, left=left, right=right))
        trees.append(nodes)
    if off != len(buf):
        raise ValidationError("trailing bytes after forest")
    return EncryptedForest(trees, images, sf, qsize)
