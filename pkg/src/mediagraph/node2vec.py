"""Biased second-order random walks plus skip-gram training.

The walk bias follows the return/in-out scheme: stepping from ``prev`` to a
neighbour ``x`` of ``cur`` reweights the edge by 1/p when ``x == prev``, by
1 when ``x`` is also adjacent to ``prev``, and by 1/q otherwise.  Walks feed
a negative-sampling skip-gram model whose input vectors become the node
embeddings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _sgns
from .graphstore import MediaGraph
from .util import derive_seed

log = logging.getLogger(__name__)


@dataclass
class Node2VecConfig:
    num_walks: int = 10
    walk_length: int = 100
    dim: int = 512
    p: float = 0.5
    q: float = 2.0
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    lr_floor: float = 1e-4  # fraction of the initial rate the linear decay stops at
    seed: int = 0

    def validate(self) -> None:
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if self.window < 1 or self.negatives < 0 or self.epochs < 0 or self.num_walks < 1:
            raise ValueError("invalid walk/training counts")


@dataclass
class WalkCorpus:
    walks: list[np.ndarray]
    n_nodes: int


def transition_weights(
    graph: MediaGraph, prev: str | None, cur: str, p: float, q: float
) -> dict[str, float]:
    """Normalized next-step distribution over neighbours of ``cur``.

    ``prev=None`` means a walk's first step, where edge weights are used
    unbiased.  A neighbourless ``cur`` yields an empty distribution (the
    walk truncates).
    """
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    adjacency = graph.adjacency()
    if cur not in adjacency:
        raise KeyError(f"unknown node {cur!r}")
    neighbors = adjacency[cur]
    if not neighbors:
        return {}
    if prev is not None and prev not in neighbors:
        raise ValueError(f"{prev!r} is not adjacent to {cur!r}")
    prev_nbrs = set(adjacency[prev]) if prev is not None else set()
    weights = {}
    for x, w in neighbors.items():
        if prev is None:
            alpha = 1.0
        elif x == prev:
            alpha = 1.0 / p
        elif x in prev_nbrs:
            alpha = 1.0
        else:
            alpha = 1.0 / q
        weights[x] = w * alpha
    total = sum(weights.values())
    return {x: w / total for x, w in sorted(weights.items())}


def build_alias(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias tables for O(1) categorical sampling."""
    n = len(probs)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int64)
    scaled = probs * n
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large:
        prob[i] = 1.0
    for i in small:
        prob[i] = 1.0
    return prob, alias


def _alias_draw(prob: np.ndarray, alias: np.ndarray, rng: np.random.Generator) -> int:
    i = min(int(rng.random() * len(prob)), len(prob) - 1)
    return i if rng.random() < prob[i] else int(alias[i])


class _WalkSampler:
    """Index-level walk machinery with lazily cached per-edge alias tables."""

    def __init__(self, graph: MediaGraph, p: float, q: float):
        self.domains = graph.domains()
        self.index = {d: i for i, d in enumerate(self.domains)}
        n = len(self.domains)
        nbrs: list[list[int]] = [[] for _ in range(n)]
        wts: list[list[float]] = [[] for _ in range(n)]
        for (a, b), score in graph.edges.items():
            ia, ib = self.index[a], self.index[b]
            nbrs[ia].append(ib)
            wts[ia].append(score)
            nbrs[ib].append(ia)
            wts[ib].append(score)
        order = [np.argsort(np.array(v, dtype=np.int64)) if v else np.array([], dtype=np.int64) for v in nbrs]
        self.nbrs = [np.array(v, dtype=np.int64)[o] for v, o in zip(nbrs, order)]
        self.wts = [np.array(v, dtype=float)[o] for v, o in zip(wts, order)]
        self.nbr_sets = [set(v.tolist()) for v in self.nbrs]
        self.p = p
        self.q = q
        self.node_alias = [build_alias(w) if len(w) else None for w in self.wts]
        self._edge_alias: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _edge_tables(self, prev: int, cur: int) -> tuple[np.ndarray, np.ndarray]:
        key = (prev, cur)
        tables = self._edge_alias.get(key)
        if tables is None:
            w = self.wts[cur].copy()
            prev_set = self.nbr_sets[prev]
            for j, x in enumerate(self.nbrs[cur]):
                if x == prev:
                    w[j] /= self.p
                elif x not in prev_set:
                    w[j] /= self.q
            tables = build_alias(w)
            self._edge_alias[key] = tables
        return tables

    def walk(self, start: int, length: int, rng: np.random.Generator) -> np.ndarray:
        path = [start]
        if len(self.nbrs[start]) == 0:
            return np.array(path, dtype=np.int64)
        prob, alias = self.node_alias[start]
        path.append(int(self.nbrs[start][_alias_draw(prob, alias, rng)]))
        while len(path) < length:
            prev, cur = path[-2], path[-1]
            if len(self.nbrs[cur]) == 0:
                break
            prob, alias = self._edge_tables(prev, cur)
            path.append(int(self.nbrs[cur][_alias_draw(prob, alias, rng)]))
        return np.array(path, dtype=np.int64)


def sample_walks(graph: MediaGraph, config: Node2VecConfig) -> WalkCorpus:
    """num_walks walks from every node; isolated nodes contribute length-1
    walks.  Each (round, start) pair derives its own RNG stream from the
    config seed, so the corpus is reproducible and independent of iteration
    order.
    """
    config.validate()
    if not graph.nodes:
        raise ValueError("graph is empty")
    sampler = _WalkSampler(graph, config.p, config.q)
    n = len(sampler.domains)
    walks: list[np.ndarray] = []
    for r in range(config.num_walks):
        for v in range(n):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, r, v])))
            walks.append(sampler.walk(v, config.walk_length, rng))
    return WalkCorpus(walks=walks, n_nodes=n)


# --- skip-gram objective, reference form -----------------------------------
# These numpy twins define the per-pair loss and gradients; the numba kernel
# implements the identical math and is checked against them in the tests.


def _sigmoid(x: np.ndarray | float):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def sgns_pair_loss(v: np.ndarray, u_ctx: np.ndarray, u_negs: np.ndarray) -> float:
    loss = -float(np.log(_sigmoid(v @ u_ctx)))
    if len(u_negs):
        loss -= float(np.sum(np.log(_sigmoid(-(u_negs @ v)))))
    return loss


def sgns_pair_grads(
    v: np.ndarray, u_ctx: np.ndarray, u_negs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g_pos = float(_sigmoid(v @ u_ctx)) - 1.0
    dv = g_pos * u_ctx
    du_negs = np.zeros_like(u_negs)
    for k in range(len(u_negs)):
        g = float(_sigmoid(v @ u_negs[k]))
        dv = dv + g * u_negs[k]
        du_negs[k] = g * v
    return dv, g_pos * v, du_negs


@dataclass
class SkipgramResult:
    embeddings: np.ndarray
    trained: np.ndarray  # per node: took part in at least one training pair
    epoch_mean_loss: np.ndarray


def train_skipgram(corpus: WalkCorpus, config: Node2VecConfig) -> SkipgramResult:
    """Train embeddings on the walk corpus (sequential, deterministic).

    Nodes that never appear in a (center, context) pair keep their
    initialization and are flagged in ``trained``.
    """
    config.validate()
    if not corpus.walks:
        raise ValueError("walk corpus is empty")
    n = corpus.n_nodes
    tokens = np.concatenate([w for w in corpus.walks]) if corpus.walks else np.array([], dtype=np.int64)
    tokens = tokens.astype(np.int64)
    lengths = np.array([len(w) for w in corpus.walks], dtype=np.int64)
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])

    counts = np.bincount(tokens, minlength=n).astype(float)
    neg_prob, neg_alias = build_alias(np.power(counts, 0.75))

    init_rng = np.random.default_rng(derive_seed(config.seed, "sgns.init"))
    syn0 = (init_rng.random((n, config.dim)) - 0.5) / config.dim
    syn1 = np.zeros((n, config.dim))
    trained = np.zeros(n, dtype=np.bool_)

    loss_sums, pair_counts = _sgns.train_sgns(
        tokens,
        offsets,
        syn0,
        syn1,
        config.window,
        config.negatives,
        config.epochs,
        config.learning_rate,
        config.lr_floor,
        neg_prob,
        neg_alias,
        np.uint64(derive_seed(config.seed, "sgns.train")),
        trained,
    )
    if not np.all(np.isfinite(syn0)):
        raise FloatingPointError("skip-gram training produced non-finite embeddings")
    untrained = int(n - trained.sum())
    if untrained:
        log.warning("%d nodes never appeared in a training pair; keeping their init vectors", untrained)
    with np.errstate(invalid="ignore"):
        mean_loss = np.where(pair_counts > 0, loss_sums / np.maximum(pair_counts, 1), 0.0)
    return SkipgramResult(embeddings=syn0, trained=trained, epoch_mean_loss=mean_loss)


def embed_graph(graph: MediaGraph, config: Node2VecConfig) -> tuple[list[str], np.ndarray, dict]:
    """Full pipeline: walks, training, plus a provenance dict for the sidecar."""
    corpus = sample_walks(graph, config)
    result = train_skipgram(corpus, config)
    info = {
        "algorithm": "node2vec",
        "config": {
            "num_walks": config.num_walks,
            "walk_length": config.walk_length,
            "dim": config.dim,
            "p": config.p,
            "q": config.q,
            "window": config.window,
            "negatives": config.negatives,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "lr_floor": config.lr_floor,
        },
        "seed": config.seed,
        "epoch_mean_loss": [float(x) for x in result.epoch_mean_loss],
        "untrained_nodes": int((~result.trained).sum()),
    }
    return graph.domains(), result.embeddings, info
