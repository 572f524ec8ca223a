import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mediagraph.graphstore import (
    FileReplayRecordSource,
    InMemoryRecordSource,
    MediaGraph,
    OverlapRecord,
    build_level0,
    expand_level,
    graph_stats,
    load_graph_csv,
    node_ordering,
    normalize_domain,
    normalized_adjacency,
    save_graph_csv,
    write_records_jsonl,
)

from conftest import bfs_hops, make_graph


class TestNormalizeDomain:
    def test_strips_scheme_www_and_path(self):
        assert normalize_domain("https://www.WSJ.com/articles") == "wsj.com"

    def test_idempotent_on_bare_domain(self):
        assert normalize_domain("wsj.com") == "wsj.com"

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_domain("")

    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("http://example.org:8080/a?b#c", "example.org"),
            ("WWW.Example.ORG", "example.org"),
            ("ftp://user@sub.site.net/x", "sub.site.net"),
            ("site.net.", "site.net"),
        ],
    )
    def test_variants(self, raw, expected):
        assert normalize_domain(raw) == expected

    @pytest.mark.parametrize("raw", ["://", "   ", "https:///path", "!!"])
    def test_unparsable_rejected(self, raw):
        with pytest.raises(ValueError):
            normalize_domain(raw)

    @given(st.from_regex(r"[a-z0-9]([a-z0-9-]{0,10}[a-z0-9])?(\.[a-z]{2,5}){1,2}", fullmatch=True))
    def test_idempotence_property(self, domain):
        once = normalize_domain(domain)
        assert normalize_domain(once) == once


WSJ_RECORD = OverlapRecord(
    "wsj.com",
    (
        ("marketwatch.com", 39.4),
        ("cnbc.com", 39.4),
        ("bloomberg.com", 35.9),
        ("reuters.com", 34.5),
    ),
)


class TestBuildLevel0:
    def test_wsj_example(self):
        g = build_level0(["wsj.com"], InMemoryRecordSource({"wsj.com": WSJ_RECORD}))
        assert graph_stats(g)[:2] == (5, 4)
        assert g.edges[("marketwatch.com", "wsj.com")] == 39.4
        assert g.edges[("cnbc.com", "wsj.com")] == 39.4
        assert g.edges[("bloomberg.com", "wsj.com")] == 35.9
        assert g.edges[("reuters.com", "wsj.com")] == 34.5
        assert g.nodes["wsj.com"].level == 0 and g.nodes["wsj.com"].is_seed
        assert g.nodes["reuters.com"].level == 1 and not g.nodes["reuters.com"].is_seed

    def test_missing_record_leaves_isolated_node(self):
        g = build_level0(["a.com"], InMemoryRecordSource({}))
        assert graph_stats(g)[:2] == (1, 0)

    def test_mutual_citation_keeps_max_score_either_order(self):
        records = {
            "a.com": OverlapRecord("a.com", (("b.com", 12.0),)),
            "b.com": OverlapRecord("b.com", (("a.com", 30.0),)),
        }
        g1 = build_level0(["a.com", "b.com"], InMemoryRecordSource(records))
        g2 = build_level0(["b.com", "a.com"], InMemoryRecordSource(records))
        assert g1 == g2
        assert g1.edges == {("a.com", "b.com"): 30.0}

    def test_seed_target_stays_level0(self):
        records = {"a.com": OverlapRecord("a.com", (("b.com", 5.0),))}
        g = build_level0(["a.com", "b.com"], InMemoryRecordSource(records))
        assert g.nodes["b.com"].level == 0 and g.nodes["b.com"].is_seed

    def test_empty_seed_list_rejected(self):
        with pytest.raises(ValueError):
            build_level0([], InMemoryRecordSource({}))


def ring_records(n: int, score: float = 20.0) -> dict[str, OverlapRecord]:
    """Cycle graph record source: each node cites its two ring neighbours."""
    doms = [f"r{i:03d}.test" for i in range(n)]
    out = {}
    for i, d in enumerate(doms):
        targets = ((doms[(i - 1) % n], score), (doms[(i + 1) % n], score))
        out[d] = OverlapRecord(d, targets)
    return out


class TestExpandLevel:
    def test_bfs_reachability_oracle(self):
        # ring of 31 nodes, one seed: after expanding to level k the node set
        # must equal the BFS ball of radius k+1 around the seed
        records = ring_records(31)
        source = InMemoryRecordSource(records)
        seed = "r000.test"
        adjacency = {
            d: {t: s for t, s in rec.targets} for d, rec in records.items()
        }
        hops = bfs_hops(adjacency, seed)
        g = build_level0([seed], source)
        assert set(g.nodes) == {d for d, h in hops.items() if h <= 1}
        for k in range(1, 5):
            expand_level(g, source, k)
            assert set(g.nodes) == {d for d, h in hops.items() if h <= k + 1}
            assert g.max_level == k
            for domain, node in g.nodes.items():
                assert node.level == hops[domain]

    def test_closure_keeps_node_count(self):
        records = {
            "a.com": OverlapRecord("a.com", (("b.com", 1.0),)),
            "b.com": OverlapRecord("b.com", (("a.com", 2.0),)),
        }
        source = InMemoryRecordSource(records)
        g = build_level0(["a.com"], source)
        n_before = g.n_nodes()
        expand_level(g, source, 1)
        assert g.n_nodes() == n_before
        assert graph_stats(g)[0] == n_before

    def test_monotone_growth(self):
        source = InMemoryRecordSource(ring_records(31))
        g = build_level0(["r000.test"], source)
        for k in range(1, 4):
            nodes_before = set(g.nodes)
            edges_before = set(g.edges)
            expand_level(g, source, k)
            assert nodes_before <= set(g.nodes)
            assert edges_before <= set(g.edges)

    def test_level_precondition(self):
        g = build_level0(["a.com"], InMemoryRecordSource({}))
        with pytest.raises(ValueError):
            expand_level(g, InMemoryRecordSource({}), 2)
        with pytest.raises(ValueError):
            expand_level(g, InMemoryRecordSource({}), 0)


class TestInsertionOrderIndependence:
    def test_shuffled_seeds_same_graph(self):
        records = ring_records(20)
        seeds = list(records)
        source = InMemoryRecordSource(records)
        reference = build_level0(sorted(seeds), source)
        rnd = random.Random(7)
        for _ in range(5):
            rnd.shuffle(seeds)
            assert build_level0(seeds, source) == reference


class TestGraphStats:
    def test_empty_graph(self):
        assert graph_stats(MediaGraph()) == (0, 0, {})

    def test_per_level_counts(self):
        g = build_level0(["wsj.com"], InMemoryRecordSource({"wsj.com": WSJ_RECORD}))
        assert graph_stats(g) == (5, 4, {0: 1, 1: 4})


class TestSerialization:
    def test_round_trip(self, tmp_path):
        source = InMemoryRecordSource(ring_records(17))
        g = build_level0(["r000.test"], source)
        expand_level(g, source, 1)
        nodes, edges = tmp_path / "nodes.csv", tmp_path / "edges.csv"
        save_graph_csv(g, nodes, edges)
        g2 = load_graph_csv(nodes, edges)
        assert g2 == g  # nodes, levels, seeds, edges and scores

    def test_edges_sorted_lexicographically(self, tmp_path):
        g = make_graph([("z.com", "a.com", 3.5), ("m.com", "b.com", 1.25)])
        nodes, edges = tmp_path / "n.csv", tmp_path / "e.csv"
        save_graph_csv(g, nodes, edges)
        rows = edges.read_text().splitlines()
        assert rows[0] == "domain_a,domain_b,score"
        assert rows[1].startswith("a.com,z.com,")
        assert rows[2].startswith("b.com,m.com,")

    def test_jsonl_replay_source(self, tmp_path):
        path = tmp_path / "records.jsonl"
        write_records_jsonl([WSJ_RECORD], path)
        source = FileReplayRecordSource(path)
        rec = source.get("wsj.com")
        assert rec == WSJ_RECORD

    def test_bad_jsonl_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"source": "a.com"}\n', encoding="utf-8")
        with pytest.raises(ValueError, match="bad.jsonl:1"):
            FileReplayRecordSource(path)


class TestNormalizedAdjacency:
    def test_single_node(self):
        g = make_graph([], nodes=["a.com"])
        mat = normalized_adjacency(g, node_ordering(g)).toarray()
        assert mat.shape == (1, 1) and mat[0, 0] == 1.0

    def test_two_node_hand_example(self):
        g = make_graph([("a.com", "b.com", 1.0)])
        mat = normalized_adjacency(g, node_ordering(g)).toarray()
        assert np.array_equal(mat, np.full((2, 2), 0.5))

    def test_symmetry_exact_random(self, rng):
        for trial in range(10):
            n = int(rng.integers(3, 20))
            doms = [f"d{i}.test" for i in range(n)]
            g = MediaGraph()
            for d in doms:
                g.add_node(d, 0, True)
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.4:
                        g.add_edge(doms[i], doms[j], float(rng.uniform(0.1, 80)))
            mat = normalized_adjacency(g, node_ordering(g)).toarray()
            assert np.max(np.abs(mat - mat.T)) == 0.0

    def test_binary_mode_ignores_weights(self):
        g = make_graph([("a.com", "b.com", 57.3)])
        mat = normalized_adjacency(g, node_ordering(g), weighted=False).toarray()
        assert np.array_equal(mat, np.full((2, 2), 0.5))

    def test_row_normalization_value(self):
        # star: center with two leaves, unit weights; degrees (3, 2, 2)
        g = make_graph([("c.com", "l1.com", 1.0), ("c.com", "l2.com", 1.0)])
        order = node_ordering(g)
        mat = normalized_adjacency(g, order).toarray()
        i, j = order["c.com"], order["l1.com"]
        assert mat[i, j] == pytest.approx(1.0 / math.sqrt(3 * 2))
        assert mat[i, i] == pytest.approx(1.0 / 3.0)

    def test_bad_ordering_rejected(self):
        g = make_graph([("a.com", "b.com", 1.0)])
        with pytest.raises(ValueError):
            normalized_adjacency(g, {"a.com": 0})
        with pytest.raises(ValueError):
            normalized_adjacency(g, {"a.com": 0, "b.com": 2})
