"""Shared fixtures and independent oracle helpers."""

from __future__ import annotations

import numpy as np
import pytest

from mediagraph.graphstore import MediaGraph


def make_graph(edges, nodes=None) -> MediaGraph:
    """Graph from (a, b, score) triples; extra isolated nodes optional."""
    g = MediaGraph()
    for a, b, score in edges:
        g.add_node(a, 0, True)
        g.add_node(b, 0, True)
        g.add_edge(a, b, score)
    for d in nodes or []:
        g.add_node(d, 0, True)
    return g


def sbm_media_graph(n: int, blocks: int, p_in: float, p_out: float, seed: int):
    """Planted-partition MediaGraph for embedding tests, plus block labels."""
    rng = np.random.default_rng(seed)
    domains = [f"n{i:04d}.test" for i in range(n)]
    block = [i % blocks for i in range(n)]
    g = MediaGraph()
    for d in domains:
        g.add_node(d, 0, True)
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if block[i] == block[j] else p_out
            if rng.random() < p:
                g.add_edge(domains[i], domains[j], float(rng.uniform(10, 60)))
    return g, domains, np.array(block)


def lloyd_kmeans(x: np.ndarray, k: int, seed: int = 0, iters: int = 100) -> np.ndarray:
    """Plain Lloyd iteration; returns cluster assignments."""
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(len(x), size=k, replace=False)]
    assign = np.zeros(len(x), dtype=int)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assign


def best_binary_agreement(assign: np.ndarray, truth: np.ndarray) -> float:
    a = (assign == truth).mean()
    b = ((1 - assign) == truth).mean()
    return max(a, b)


def bfs_hops(adjacency: dict[str, dict[str, float]], start: str) -> dict[str, int]:
    """Plain BFS hop distances (test-side oracle)."""
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for v in frontier:
            for u in adjacency[v]:
                if u not in dist:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    return dist


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
