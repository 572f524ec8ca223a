"""Audience-overlap media graph: construction, level expansion, serialization.

A graph is grown from an annotated seed list by replaying overlap records
(source site -> up to five most-similar sites with overlap scores).  Round 0
queries the seeds; each later round queries the nodes discovered in the
previous round.  A node's ``level`` is the round in which it first appeared
(seeds are level 0, their new targets level 1, and so on), and
``max_level`` counts completed query rounds.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

MAX_TARGETS_PER_RECORD = 5

_HOSTNAME_RE = re.compile(r"^[a-z0-9]([a-z0-9._-]*[a-z0-9])?$")


def normalize_domain(raw: str) -> str:
    """Normalize a URL or hostname to a bare lowercase domain.

    Strips scheme, leading ``www.``, port, path/query/fragment.  Idempotent.
    Raises ``ValueError`` when no hostname can be extracted.
    """
    if not raw or not raw.strip():
        raise ValueError("empty domain string")
    s = raw.strip().lower()
    if "://" in s:
        s = s.split("://", 1)[1]
    s = s.split("/", 1)[0].split("?", 1)[0].split("#", 1)[0]
    if "@" in s:  # userinfo
        s = s.rsplit("@", 1)[1]
    s = s.split(":", 1)[0]
    if s.startswith("www.") and len(s) > 4:
        s = s[4:]
    s = s.rstrip(".")
    if not s or not _HOSTNAME_RE.match(s):
        raise ValueError(f"no parsable hostname in {raw!r}")
    return s


@dataclass(frozen=True)
class DomainNode:
    domain: str
    level: int
    is_seed: bool


@dataclass(frozen=True)
class OverlapRecord:
    """One replayed query: a source domain and its most-similar sites."""

    source: str
    targets: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if len(self.targets) > MAX_TARGETS_PER_RECORD:
            raise ValueError(
                f"record for {self.source} has {len(self.targets)} targets "
                f"(limit {MAX_TARGETS_PER_RECORD})"
            )
        for domain, score in self.targets:
            if score < 0 or not math.isfinite(score):
                raise ValueError(f"invalid overlap score {score} for {domain}")


class RecordSource(Protocol):
    """Anything that can answer 'what sites overlap with this domain?'."""

    def get(self, domain: str) -> OverlapRecord | None: ...


class InMemoryRecordSource:
    """Record source backed by a plain mapping (synthetic generators)."""

    def __init__(self, records: Mapping[str, OverlapRecord]):
        self._records = dict(records)

    def get(self, domain: str) -> OverlapRecord | None:
        return self._records.get(domain)


class FileReplayRecordSource:
    """Replays overlap records from a JSON-lines fixture file.

    Each line: ``{"source": "<domain>", "targets": [{"domain": d, "score": s}, ...]}``.
    """

    def __init__(self, path: str | Path):
        self._records: dict[str, OverlapRecord] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    source = normalize_domain(obj["source"])
                    targets = tuple(
                        (normalize_domain(t["domain"]), float(t["score"]))
                        for t in obj["targets"]
                    )
                except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad overlap record: {exc}") from exc
                self._records[source] = OverlapRecord(source, targets)

    def get(self, domain: str) -> OverlapRecord | None:
        return self._records.get(domain)

    def __len__(self) -> int:
        return len(self._records)


def write_records_jsonl(records: Iterable[OverlapRecord], path: str | Path) -> None:
    lines = []
    for rec in records:
        obj = {
            "source": rec.source,
            "targets": [{"domain": d, "score": s} for d, s in rec.targets],
        }
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="")


@dataclass
class MediaGraph:
    """Weighted undirected graph of domains with expansion-level tags.

    ``edges`` maps a lexicographically sorted domain pair to its overlap
    score; duplicate observations of a pair keep the maximum score, which
    makes construction independent of insertion order.
    """

    nodes: dict[str, DomainNode] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    max_level: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, MediaGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def n_nodes(self) -> int:
        return len(self.nodes)

    def n_edges(self) -> int:
        return len(self.edges)

    def domains(self) -> list[str]:
        return sorted(self.nodes)

    def add_node(self, domain: str, level: int, is_seed: bool = False) -> None:
        """Insert a node; re-discovery never changes level or seed status."""
        if domain not in self.nodes:
            self.nodes[domain] = DomainNode(domain, level, is_seed)

    def add_edge(self, a: str, b: str, score: float) -> None:
        if a == b:
            return  # no self-loops
        if score <= 0:
            return
        key = (a, b) if a < b else (b, a)
        prev = self.edges.get(key)
        if prev is None or score > prev:
            self.edges[key] = score

    def neighbors(self, domain: str) -> dict[str, float]:
        out: dict[str, float] = {}
        for (a, b), score in self.edges.items():
            if a == domain:
                out[b] = score
            elif b == domain:
                out[a] = score
        return out

    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {d: {} for d in self.nodes}
        for (a, b), score in self.edges.items():
            adj[a][b] = score
            adj[b][a] = score
        return adj


def _ingest_record(graph: MediaGraph, record: OverlapRecord, new_level: int) -> None:
    for target, score in record.targets:
        target = normalize_domain(target)
        if target == record.source:
            log.debug("dropping self-loop record entry for %s", record.source)
            continue
        if score <= 0:
            log.debug("dropping non-positive score %s -> %s (%s)", record.source, target, score)
            continue
        graph.add_node(target, level=new_level)
        graph.add_edge(record.source, target, score)


def build_level0(seeds: Iterable[str], records: RecordSource) -> MediaGraph:
    """Build the round-0 graph: query every seed, add its targets and edges.

    Seeds are level 0; newly discovered targets are level 1 (they form the
    frontier for ``expand_level(..., k=1)``).  A seed without a record stays
    isolated.
    """
    normalized = sorted({normalize_domain(s) for s in seeds})
    if not normalized:
        raise ValueError("seed list is empty")
    graph = MediaGraph()
    for seed in normalized:
        graph.add_node(seed, level=0, is_seed=True)
    for seed in normalized:
        record = records.get(seed)
        if record is None:
            log.info("no overlap record for seed %s; node stays isolated", seed)
            continue
        _ingest_record(graph, record, new_level=1)
    graph.max_level = 0
    return graph


def expand_level(graph: MediaGraph, records: RecordSource, k: int) -> MediaGraph:
    """Expand the graph by one query round (in place, also returned).

    Queries every node discovered in the previous round (level == k), adding
    new neighbours at level k+1.  Node and edge counts never decrease.
    """
    if k < 1:
        raise ValueError("expansion level k must be >= 1")
    if graph.max_level != k - 1:
        raise ValueError(
            f"graph is at level {graph.max_level}; expected {k - 1} before expanding to {k}"
        )
    frontier = sorted(d for d, node in graph.nodes.items() if node.level == k)
    for domain in frontier:
        record = records.get(domain)
        if record is None:
            log.info("no overlap record for %s; skipping", domain)
            continue
        _ingest_record(graph, record, new_level=k + 1)
    graph.max_level = k
    return graph


def graph_stats(graph: MediaGraph) -> tuple[int, int, dict[int, int]]:
    """(node count, edge count, nodes per level)."""
    per_level: dict[int, int] = {}
    for node in graph.nodes.values():
        per_level[node.level] = per_level.get(node.level, 0) + 1
    return len(graph.nodes), len(graph.edges), dict(sorted(per_level.items()))


def node_ordering(graph: MediaGraph) -> dict[str, int]:
    """Canonical node index map: lexicographic over domains."""
    return {d: i for i, d in enumerate(graph.domains())}


def normalized_adjacency(
    graph: MediaGraph, ordering: Mapping[str, int], weighted: bool = True
) -> sp.csr_matrix:
    """Symmetrically normalized adjacency with self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2} where A carries overlap scores
    (``weighted=True``) or unit weights, and D is the degree matrix of A + I.
    Each off-diagonal value is computed once per unordered pair and assigned
    to both triangles, so the result is symmetric bit-for-bit.
    """
    n = len(graph.nodes)
    if len(ordering) != n or set(ordering) != set(graph.nodes):
        raise ValueError("ordering must be a bijection over the graph's nodes")
    if sorted(ordering.values()) != list(range(n)):
        raise ValueError("ordering values must be 0..n-1")

    degree = np.ones(n)  # self-loop weight 1
    pairs: list[tuple[int, int, float]] = []
    for (a, b), score in graph.edges.items():
        w = float(score) if weighted else 1.0
        i, j = ordering[a], ordering[b]
        pairs.append((i, j, w))
        degree[i] += w
        degree[j] += w

    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i)
        cols.append(i)
        vals.append(1.0 / math.sqrt(degree[i] * degree[i]))
    for i, j, w in pairs:
        v = w / math.sqrt(degree[i] * degree[j])
        rows.extend((i, j))
        cols.extend((j, i))
        vals.extend((v, v))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return mat.tocsr()


def save_graph_csv(graph: MediaGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    """Write nodes.csv (domain, level, is_seed) and edges.csv (domain_a, domain_b, score).

    Edge rows are ordered with domain_a < domain_b; files are UTF-8 with a
    header row and '.' decimal separator.
    """
    with open(nodes_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain", "level", "is_seed"])
        for domain in sorted(graph.nodes):
            node = graph.nodes[domain]
            writer.writerow([node.domain, node.level, int(node.is_seed)])
    with open(edges_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain_a", "domain_b", "score"])
        for (a, b) in sorted(graph.edges):
            writer.writerow([a, b, repr(graph.edges[(a, b)])])


def load_graph_csv(nodes_path: str | Path, edges_path: str | Path) -> MediaGraph:
    """Inverse of :func:`save_graph_csv` up to (nodes, edges, levels).

    ``max_level`` is not serialized; it is restored as max(level) - 1, the
    frontier convention for a growing graph.
    """
    graph = MediaGraph()
    with open(nodes_path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            graph.nodes[row["domain"]] = DomainNode(
                row["domain"], int(row["level"]), bool(int(row["is_seed"]))
            )
    with open(edges_path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            a, b = row["domain_a"], row["domain_b"]
            if a not in graph.nodes or b not in graph.nodes:
                raise ValueError(f"edge endpoint missing from nodes.csv: {a} -- {b}")
            graph.add_edge(a, b, float(row["score"]))
    levels = [n.level for n in graph.nodes.values()]
    graph.max_level = max(0, max(levels, default=0) - 1)
    return graph
