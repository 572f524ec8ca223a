"""Per-domain engagement metrics: parsing, scaling, binarization, imputation.

Five scalar metrics are kept per domain (log10 traffic rank, sites linking
in, bounce rate in percent, daily pageviews per visitor, daily time on site
in seconds) together with four presence flags recording whether the raw
source supplied the metric at all.  Availability is itself predictive, so
imputation fills values but never touches the flags.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphstore import MediaGraph

log = logging.getLogger(__name__)

METRICS = ("rank_log", "sites_linking_in", "bounce_rate", "daily_pageviews", "daily_time_s")

# presence-flag order; traffic rank has no flag (near-universally available)
FLAGGED_METRICS = ("sites_linking_in", "bounce_rate", "daily_time_s", "daily_pageviews")

FEATURE_NAMES = METRICS + (
    "has_sites_linking_in",
    "has_bounce_rate",
    "has_daily_time",
    "has_daily_pageviews",
)

_TIME_RE = re.compile(r"^(?:(\d+):)?(\d+):(\d{2})$")


def log_scale_rank(rank: int) -> float:
    """log10 of a traffic rank; rank 1 maps to 0."""
    if rank < 1:
        raise ValueError(f"traffic rank must be >= 1, got {rank}")
    return math.log10(rank)


def parse_time_on_site(text: str) -> float:
    """Convert "M:SS" or "H:MM:SS" to seconds."""
    m = _TIME_RE.match(text.strip())
    if not m:
        raise ValueError(f"unparsable time-on-site value {text!r}")
    hours, minutes, seconds = m.groups()
    h = int(hours) if hours is not None else 0
    mi, s = int(minutes), int(seconds)
    if s >= 60 or (hours is not None and mi >= 60):
        raise ValueError(f"unparsable time-on-site value {text!r}")
    return float(h * 3600 + mi * 60 + s)


@dataclass
class NodeFeatures:
    """Metric values for one domain plus original-availability bookkeeping.

    ``present`` records what the raw source supplied and is never modified;
    ``missing`` is the set of metrics currently lacking a value and is
    cleared by imputation.
    """

    domain: str
    values: dict[str, float] = field(default_factory=dict)
    present: dict[str, bool] = field(default_factory=dict)
    missing: set[str] = field(default_factory=set)

    def copy(self) -> "NodeFeatures":
        return NodeFeatures(self.domain, dict(self.values), dict(self.present), set(self.missing))


FeatureTable = dict[str, NodeFeatures]


def binarize(features: NodeFeatures) -> tuple[int, int, int, int]:
    """{0,1} flags for (sites linking in, bounce rate, daily time, daily pageviews)."""
    return tuple(int(features.present.get(m, False)) for m in FLAGGED_METRICS)


def feature_vector(features: NodeFeatures) -> np.ndarray:
    """Fixed 9-dim vector: the five metrics then the four presence flags."""
    if features.missing:
        raise ValueError(
            f"{features.domain} still has missing metrics {sorted(features.missing)}; impute first"
        )
    scalars = [features.values[m] for m in METRICS]
    return np.array(scalars + list(binarize(features)), dtype=float)


def feature_matrix(table: FeatureTable, domains: list[str]) -> np.ndarray:
    return np.stack([feature_vector(table[d]) for d in domains])


def load_features_csv(path: str | Path) -> FeatureTable:
    """Read features.csv (domain, rank, sites_linking_in, bounce_rate,
    daily_pageviews, daily_time); empty cells mean missing.

    Malformed time strings are logged and treated as missing rather than
    failing the whole load.
    """
    table: FeatureTable = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            nf = NodeFeatures(domain=row["domain"])
            _ingest(nf, "rank_log", row.get("rank", ""), _parse_rank)
            _ingest(nf, "sites_linking_in", row.get("sites_linking_in", ""), _parse_nonneg)
            _ingest(nf, "bounce_rate", row.get("bounce_rate", ""), _parse_bounce)
            _ingest(nf, "daily_pageviews", row.get("daily_pageviews", ""), _parse_nonneg)
            _ingest(nf, "daily_time_s", row.get("daily_time", ""), parse_time_on_site)
            table[nf.domain] = nf
    return table


def _parse_rank(text: str) -> float:
    return log_scale_rank(int(text))


def _parse_nonneg(text: str) -> float:
    v = float(text)
    if v < 0:
        raise ValueError(f"negative metric value {text}")
    return v


def _parse_bounce(text: str) -> float:
    v = float(text)
    if not 0 <= v <= 100:
        raise ValueError(f"bounce rate {text} outside [0, 100]")
    return v


def _ingest(nf: NodeFeatures, metric: str, text: str, parse) -> None:
    text = (text or "").strip()
    if not text:
        nf.present[metric] = False
        nf.missing.add(metric)
        return
    try:
        nf.values[metric] = parse(text)
        nf.present[metric] = True
    except ValueError as exc:
        log.warning("%s: %s; marking %s missing", nf.domain, exc, metric)
        nf.present[metric] = False
        nf.missing.add(metric)


def ranked_bfs_order(adjacency: dict[str, dict[str, float]], start: str) -> list[str]:
    """All nodes of ``start``'s component ordered by imputation nearness.

    Primary key is hop distance; within a hop layer, nodes that are reached
    through a stronger overlap edge come first (score of the best edge from
    the previous layer), with the domain name as the final tiebreak.
    """
    order: list[str] = []
    visited = {start}
    layer = [start]
    while layer:
        entry: dict[str, float] = {}
        for w in layer:
            for u, score in adjacency[w].items():
                if u in visited:
                    continue
                if score > entry.get(u, -math.inf):
                    entry[u] = score
        nxt = sorted(entry, key=lambda u: (-entry[u], u))
        order.extend(nxt)
        visited.update(nxt)
        layer = nxt
    return order


def impute_missing(graph: MediaGraph, table: FeatureTable, k: int = 5) -> FeatureTable:
    """Fill missing metrics with the mean of the k nearest neighbours' values.

    Nearness is hop distance in the overlap graph (see
    :func:`ranked_bfs_order`); only neighbours whose value was present in the
    *input* table count, so the result does not depend on imputation order
    and a second pass is a no-op.  A node whose component has no donor falls
    back to the global mean of present values.
    """
    if set(table) != set(graph.nodes):
        raise ValueError("feature table and graph must cover the same node set")
    adjacency = graph.adjacency()

    global_means: dict[str, float] = {}
    for metric in METRICS:
        donors = [nf.values[metric] for nf in table.values() if metric not in nf.missing]
        if donors:
            # fsum: exactly rounded, so the mean is independent of donor order
            global_means[metric] = math.fsum(donors) / len(donors)
        else:
            global_means[metric] = 0.0
            log.warning("metric %s has no present values anywhere; imputing 0.0", metric)

    out: FeatureTable = {d: nf.copy() for d, nf in table.items()}
    for domain, nf in out.items():
        if not nf.missing:
            continue
        order = ranked_bfs_order(adjacency, domain)
        for metric in sorted(nf.missing):
            donors = [
                table[u].values[metric] for u in order if metric not in table[u].missing
            ][:k]
            if donors:
                nf.values[metric] = math.fsum(donors) / len(donors)
            else:
                nf.values[metric] = global_means[metric]
                log.info("%s: no %s donors in component; using global mean", domain, metric)
        nf.missing.clear()
    return out


def write_feature_channel_csv(table: FeatureTable, domains: list[str], path: str | Path) -> None:
    """Write imputed 9-dim feature vectors as a representation-channel CSV."""
    mat = feature_matrix(table, domains)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain"] + [f"v{i}" for i in range(mat.shape[1])])
        for domain, row in zip(domains, mat):
            writer.writerow([domain] + [repr(float(x)) for x in row])
