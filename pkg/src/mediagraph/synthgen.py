"""Synthetic homophilous media-graph fixtures.

Generates, from one seed, everything the pipeline consumes: an
overlap-record file (planted-partition graph, per-node top-5 neighbour
lists), class-conditional engagement metrics with realistic missingness,
labels for a configurable share of nodes, and a seed list.  Same seed,
byte-identical files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evalkit import BIAS_CLASSES, FACTUALITY_CLASSES, save_labels_csv
from .graphstore import MediaGraph, OverlapRecord, write_records_jsonl
from .util import derive_seed

log = logging.getLogger(__name__)

# complements of the observed availability rates for
# (rank, sites_linking_in, bounce_rate, daily_pageviews, daily_time)
DEFAULT_MISSINGNESS = (0.0008, 0.0502, 0.6891, 0.3892, 0.6373)

SCORE_LOW, SCORE_HIGH = 10.0, 60.0  # brackets real observed overlap scores
TOP_K_TARGETS = 5


@dataclass
class SynthConfig:
    n_nodes: int
    classes: int = 3
    p_in: float = 0.05
    p_out: float = 0.002
    class_shift: tuple[float, ...] = (0.0, 0.75, 1.5)
    missingness: tuple[float, ...] = DEFAULT_MISSINGNESS
    label_fraction: float = 1.0
    halo_factor: float = 0.0
    seed_pool: str = "all"  # "all" nodes or only "labeled" ones become seeds
    seed_fraction: float = 1.0
    homophilous: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if not 2 <= self.classes <= 3:
            raise ValueError("classes must be 2 or 3")
        if self.homophilous and self.p_in <= self.p_out:
            raise ValueError("homophilous config requires p_in > p_out")
        for p in (self.p_in, self.p_out, self.label_fraction, self.seed_fraction):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if len(self.missingness) != 5 or any(not 0 <= r <= 1 for r in self.missingness):
            raise ValueError("missingness must be five rates in [0, 1]")
        if len(self.class_shift) < self.classes:
            raise ValueError("class_shift must provide an offset per class")
        if self.seed_pool not in ("all", "labeled"):
            raise ValueError("seed_pool must be 'all' or 'labeled'")
        if self.halo_factor < 0:
            raise ValueError("halo_factor must be >= 0")


@dataclass
class SynthResult:
    records_path: Path
    features_path: Path
    labels_path: Path
    seeds_path: Path
    blocks: dict[str, int] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    labeled: list[str] = field(default_factory=list)
    seeds: list[str] = field(default_factory=list)


def _core_domain(i: int) -> str:
    return f"site{i:05d}.test"


def _halo_domain(i: int) -> str:
    return f"halo{i:05d}.test"


def _planted_partition(config: SynthConfig, rng: np.random.Generator) -> tuple[MediaGraph, dict[str, int]]:
    n = config.n_nodes
    blocks = {_core_domain(i): i % config.classes for i in range(n)}
    graph = MediaGraph()
    for i in range(n):
        graph.add_node(_core_domain(i), level=0, is_seed=True)
    block_arr = np.arange(n) % config.classes
    for i in range(n - 1):
        right = block_arr[i + 1 :]
        prob = np.where(right == block_arr[i], config.p_in, config.p_out)
        hits = np.nonzero(rng.random(n - 1 - i) < prob)[0]
        for off in hits:
            j = i + 1 + int(off)
            score = float(rng.uniform(SCORE_LOW, SCORE_HIGH))
            graph.add_edge(_core_domain(i), _core_domain(j), score)
    return graph, blocks


def plant_unlabeled_halo(
    graph: MediaGraph,
    halo_factor: float,
    seed: int,
    groups: dict[str, int] | None = None,
) -> MediaGraph:
    """Attach a periphery of extra nodes so the original nodes become a
    1/(1+halo_factor) share of the graph.

    Each halo node is linked to two existing nodes; when ``groups`` is
    given the two anchors are drawn from a single group, so the periphery
    preserves the graph's homophily.  Halo nodes carry no labels (label
    files simply do not list them).
    """
    if halo_factor < 0:
        raise ValueError("halo_factor must be >= 0")
    rng = np.random.default_rng(seed)
    core = graph.domains()
    n_halo = round(halo_factor * len(core))
    out = MediaGraph(nodes=dict(graph.nodes), edges=dict(graph.edges), max_level=graph.max_level)
    if n_halo == 0:
        return out
    by_group: dict[int, list[str]] = {}
    if groups is not None:
        for d in core:
            by_group.setdefault(groups[d], []).append(d)
        group_ids = sorted(by_group)
    for h in range(n_halo):
        domain = _halo_domain(h)
        out.add_node(domain, level=0, is_seed=True)
        if groups is not None:
            pool = by_group[group_ids[h % len(group_ids)]]
        else:
            pool = core
        count = min(2, len(pool))
        anchors = rng.choice(len(pool), size=count, replace=False)
        for a in anchors:
            out.add_edge(domain, pool[int(a)], float(rng.uniform(SCORE_LOW, SCORE_HIGH)))
    return out


def _records_from_graph(graph: MediaGraph) -> list[OverlapRecord]:
    adj = graph.adjacency()
    records = []
    for domain in graph.domains():
        ranked = sorted(adj[domain].items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_K_TARGETS]
        records.append(OverlapRecord(domain, tuple(ranked)))
    return records


def _format_time(seconds: int) -> str:
    h, rem = divmod(seconds, 3600)
    m, s = divmod(rem, 60)
    return f"{h}:{m:02d}:{s:02d}" if h else f"{m}:{s:02d}"


def _metric_rows(
    domains: list[str],
    blocks: dict[str, int],
    config: SynthConfig,
    rng: np.random.Generator,
) -> list[list[str]]:
    """Class-conditional lognormal/beta metric draws, then missingness masking."""
    rows = []
    rates = config.missingness
    for domain in domains:
        z = config.class_shift[blocks[domain]]
        rank = max(1, round(10 ** rng.normal(5.0 - 0.4 * z, 0.5)))
        linking = round(10 ** rng.normal(2.0 + 0.3 * z, 0.4))
        bounce = 100.0 * rng.beta(2.0 + z, 3.0)
        pageviews = 10 ** rng.normal(0.3 + 0.15 * z, 0.25)
        time_s = max(1, round(10 ** rng.normal(2.2 + 0.2 * z, 0.3)))
        cells = [
            str(rank),
            str(linking),
            f"{bounce:.2f}",
            f"{pageviews:.2f}",
            _format_time(time_s),
        ]
        mask = rng.random(5)
        rows.append([domain] + [c if mask[i] >= rates[i] else "" for i, c in enumerate(cells)])
    return rows


def generate(config: SynthConfig, out_dir: str | Path) -> SynthResult:
    """Emit records.jsonl, features.csv, labels.csv and seeds.txt into out_dir."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    graph_rng = np.random.default_rng(derive_seed(config.seed, "synth.graph"))
    graph, blocks = _planted_partition(config, graph_rng)
    if config.halo_factor > 0:
        graph = plant_unlabeled_halo(
            graph, config.halo_factor, derive_seed(config.seed, "synth.halo"), groups=blocks
        )
        adj = graph.adjacency()
        for domain in graph.domains():
            if domain not in blocks:  # halo: inherit the (unique) anchor group
                neighbor_blocks = {blocks[u] for u in adj[domain] if u in blocks}
                blocks[domain] = min(neighbor_blocks) if neighbor_blocks else 0

    domains = graph.domains()
    core = [d for d in domains if not d.startswith("halo")]

    # stratified labeled subset of the core
    label_rng = np.random.default_rng(derive_seed(config.seed, "synth.labels"))
    labeled: list[str] = []
    for c in range(config.classes):
        members = [d for d in core if blocks[d] == c]
        take = round(config.label_fraction * len(members))
        picked = label_rng.permutation(len(members))[:take]
        labeled.extend(members[i] for i in sorted(picked))
    labeled.sort()

    labels: dict[str, dict[str, str | None]] = {}
    labeled_set = set(labeled)
    for domain in domains:
        if domain in labeled_set:
            b = blocks[domain]
            labels[domain] = {
                "factuality": FACTUALITY_CLASSES[b] if b < 3 else None,
                "bias": BIAS_CLASSES[b] if b < 3 else None,
            }
        else:
            labels[domain] = {"factuality": None, "bias": None}

    seed_rng = np.random.default_rng(derive_seed(config.seed, "synth.seeds"))
    pool = labeled if config.seed_pool == "labeled" else domains
    if config.seed_fraction >= 1.0:
        seeds = list(pool)
    else:
        seeds = []
        for c in range(config.classes):
            members = [d for d in pool if blocks[d] == c]
            take = max(1, round(config.seed_fraction * len(members)))
            picked = seed_rng.permutation(len(members))[:take]
            seeds.extend(members[i] for i in sorted(picked))
        seeds.sort()

    feat_rng = np.random.default_rng(derive_seed(config.seed, "synth.features"))
    rows = _metric_rows(domains, blocks, config, feat_rng)

    result = SynthResult(
        records_path=out_dir / "records.jsonl",
        features_path=out_dir / "features.csv",
        labels_path=out_dir / "labels.csv",
        seeds_path=out_dir / "seeds.txt",
        blocks=blocks,
        edges=dict(graph.edges),
        labeled=labeled,
        seeds=seeds,
    )
    write_records_jsonl(_records_from_graph(graph), result.records_path)
    header = "domain,rank,sites_linking_in,bounce_rate,daily_pageviews,daily_time"
    lines = [header] + [",".join(row) for row in rows]
    result.features_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
    save_labels_csv(labels, result.labels_path)
    result.seeds_path.write_text("\n".join(seeds) + "\n", encoding="utf-8", newline="")
    log.info(
        "synth fixture: %d nodes (%d labeled), %d edges, %d seeds",
        len(domains), len(labeled), len(graph.edges), len(seeds),
    )
    return result
