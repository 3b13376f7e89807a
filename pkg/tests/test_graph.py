import itertools
import json
import random

import numpy as np
import pytest

from tbgraphrag.embeddings import HashedTrigramEmbedder
from tbgraphrag.graph import (
    Entity,
    GraphEdge,
    GraphFormatError,
    KnowledgeGraph,
    KnowledgeGraphBuilder,
    build_graph,
    default_gazetteer,
    extract_entities,
    link_entities,
    load_gazetteer,
    load_graph,
    save_gazetteer,
    save_graph,
)

from conftest import make_chunk


def entity(eid, name, aliases=(), category="drug"):
    return Entity(entity_id=eid, canonical_name=name, aliases=list(aliases),
                  category=category)


SMALL_GAZETTEER = [
    entity("isoniazid", "isoniazid", ["INH"]),
    entity("rifampicin", "rifampicin", ["rifampin"]),
    entity("tuberculosis", "tuberculosis", ["TB"], category="disease"),
    entity("drt", "drug-resistant tuberculosis", ["DR-TB"], category="disease"),
]


class TestExtractEntities:
    def test_two_drugs(self):
        chunk = make_chunk("c", "rifampicin and isoniazid")
        mentions = extract_entities(chunk, SMALL_GAZETTEER)
        assert sorted(m.entity_id for m in mentions) == ["isoniazid", "rifampicin"]

    def test_longest_match_wins(self):
        chunk = make_chunk("c", "manage drug-resistant tuberculosis early")
        mentions = extract_entities(chunk, SMALL_GAZETTEER)
        assert [m.entity_id for m in mentions] == ["drt"]
        start, end = mentions[0].char_start, mentions[0].char_end
        assert chunk.text[start:end] == "drug-resistant tuberculosis"

    def test_case_insensitive_alias(self):
        chunk = make_chunk("c", "start INH promptly")
        mentions = extract_entities(chunk, SMALL_GAZETTEER)
        assert [m.entity_id for m in mentions] == ["isoniazid"]

    def test_word_boundaries(self):
        chunk = make_chunk("c", "TBD and STB are not the disease")
        assert extract_entities(chunk, SMALL_GAZETTEER) == []

    def test_empty_chunk(self):
        assert extract_entities(make_chunk("c", ""), SMALL_GAZETTEER) == []

    def test_offsets_always_slice_to_an_alias(self):
        gazetteer = default_gazetteer()
        chunk = make_chunk(
            "c",
            "Xpert MTB/RIF confirmed rifampicin-resistant tuberculosis; "
            "start bedaquiline, linezolid and levofloxacin with ART.",
        )
        surfaces = {
            form.lower() for e in gazetteer for form in e.surface_forms()
        }
        for m in extract_entities(chunk, gazetteer):
            assert chunk.text[m.char_start:m.char_end].lower() in surfaces

    def test_matches_brute_force_scan_oracle(self):
        rng = random.Random(42)
        vocab = ["isoniazid", "rifampicin", "TB", "INH", "tuberculosis",
                 "drug-resistant tuberculosis", "care", "regimen", "adherence",
                 "clinic", "cough", "treatment"]
        chunks = [
            make_chunk(f"c{i}", " ".join(rng.choice(vocab) for _ in range(12)))
            for i in range(50)
        ]

        def oracle(chunk):
            # Brute force: test every surface form at every position, then
            # apply longest-match-wins with leftmost tie-breaking.
            text = chunk.text.lower()
            candidates = []
            for ent in SMALL_GAZETTEER:
                for form in ent.surface_forms():
                    form_l = form.lower()
                    for start in range(len(text) - len(form_l) + 1):
                        if text[start:start + len(form_l)] != form_l:
                            continue
                        before = text[start - 1] if start > 0 else " "
                        after_idx = start + len(form_l)
                        after = text[after_idx] if after_idx < len(text) else " "
                        boundary_chars = set("abcdefghijklmnopqrstuvwxyz0123456789_")
                        if before in boundary_chars or after in boundary_chars:
                            continue
                        candidates.append((start, start + len(form_l), ent.entity_id))
            candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0], c[2]))
            chosen = []
            for cand in candidates:
                if all(cand[1] <= c[0] or cand[0] >= c[1] for c in chosen):
                    chosen.append(cand)
            return sorted(chosen)

        for chunk in chunks:
            got = [
                (m.char_start, m.char_end, m.entity_id)
                for m in extract_entities(chunk, SMALL_GAZETTEER)
            ]
            assert got == oracle(chunk), chunk.text


class TestLinkEntities:
    def test_strict_threshold_no_edges(self):
        embedder = HashedTrigramEmbedder(seed=9, dimension=64)
        edges = link_entities(SMALL_GAZETTEER, embedder, threshold=1.0)
        assert edges == []

    def test_duplicate_names_weight_one(self):
        pair = [entity("a", "bedaquiline"), entity("b", "bedaquiline")]
        embedder = HashedTrigramEmbedder(seed=9, dimension=64)
        edges = link_entities(pair, embedder, threshold=1.0)
        assert len(edges) == 1
        assert edges[0].weight == pytest.approx(1.0, abs=1e-9)
        assert (edges[0].src, edges[0].dst) == ("a", "b")

    def test_matches_all_pairs_cosine_oracle(self):
        rng = random.Random(3)
        entities = [
            entity(f"e{i:02d}", f"{rng.choice(['tubercul','rifamp','bedaquil'])}in {i}")
            for i in range(20)
        ]
        embedder = HashedTrigramEmbedder(seed=12, dimension=64)
        threshold = 0.85
        edges = link_entities(entities, embedder, threshold=threshold)
        vectors = embedder.embed([e.canonical_name for e in entities])
        expected = set()
        for i, j in itertools.combinations(range(20), 2):
            sim = float(
                np.dot(vectors[i], vectors[j])
                / (np.linalg.norm(vectors[i]) * np.linalg.norm(vectors[j]))
            )
            if sim >= threshold:
                expected.add(tuple(sorted((entities[i].entity_id, entities[j].entity_id))))
        assert {(e.src, e.dst) for e in edges} == expected
        assert expected  # fixture must actually exercise the threshold


class TestBuildGraph:
    def test_single_chunk_two_entities(self):
        chunk = make_chunk("c1", "rifampicin with isoniazid")
        mentions = extract_entities(chunk, SMALL_GAZETTEER)
        graph = build_graph([chunk], mentions, entities=SMALL_GAZETTEER)
        kinds = {(e.kind, e.src, e.dst) for e in graph.edges}
        assert ("mentions", "rifampicin", "c1") in kinds
        assert ("mentions", "isoniazid", "c1") in kinds
        assert ("cooccurs", "isoniazid", "rifampicin") in kinds

    def test_cooccurrence_weight_counts_chunks(self):
        chunks = [
            make_chunk(f"c{i}", "isoniazid and rifampicin together") for i in range(3)
        ]
        mentions = [m for c in chunks for m in extract_entities(c, SMALL_GAZETTEER)]
        graph = build_graph(chunks, mentions, entities=SMALL_GAZETTEER)
        cooccur = [e for e in graph.edges if e.kind == "cooccurs"]
        assert len(cooccur) == 1
        assert cooccur[0].weight == 3.0

    def test_matches_pairwise_intersection_oracle(self):
        rng = random.Random(8)
        names = [e.canonical_name for e in SMALL_GAZETTEER]
        chunks = [
            make_chunk(
                f"c{i:02d}",
                " ".join(rng.choice(names + ["filler"]) for _ in range(6)),
            )
            for i in range(30)
        ]
        mentions = [m for c in chunks for m in extract_entities(c, SMALL_GAZETTEER)]
        graph = build_graph(chunks, mentions, entities=SMALL_GAZETTEER)
        # Oracle: chunk-set intersection sizes per entity pair.
        chunk_sets: dict[str, set[str]] = {}
        for m in mentions:
            chunk_sets.setdefault(m.entity_id, set()).add(m.chunk_id)
        expected = {}
        for a, b in itertools.combinations(sorted(chunk_sets), 2):
            n = len(chunk_sets[a] & chunk_sets[b])
            if n:
                expected[(a, b)] = float(n)
        got = {
            (e.src, e.dst): e.weight for e in graph.edges if e.kind == "cooccurs"
        }
        assert got == expected

    def test_dangling_chunk_rejected(self):
        chunk = make_chunk("c1", "isoniazid")
        mentions = extract_entities(chunk, SMALL_GAZETTEER)
        bad = [m.__class__(m.entity_id, "ghost", m.char_start, m.char_end) for m in mentions]
        with pytest.raises(ValueError, match="ghost"):
            build_graph([chunk], bad, entities=SMALL_GAZETTEER)


def chain_graph():
    entities = [entity(x, f"name {x}") for x in "abc"]
    edges = [
        GraphEdge("a", "b", "cooccurs", 1.0),
        GraphEdge("b", "c", "similar_to", 0.9),
    ]
    return KnowledgeGraph(entities=entities, chunk_ids=[], edges=edges)


class TestNeighbors:
    def test_isolated_entity(self):
        graph = KnowledgeGraph(entities=[entity("solo", "solo name")], chunk_ids=[], edges=[])
        assert graph.neighbors("solo", depth=1) == set()

    def test_chain_depths(self):
        graph = chain_graph()
        assert graph.neighbors("a", depth=1) == {"b"}
        assert graph.neighbors("a", depth=2) == {"b", "c"}

    def test_unknown_entity_empty(self):
        assert chain_graph().neighbors("missing", depth=2) == set()

    def test_monotone_in_depth(self):
        graph = chain_graph()
        assert graph.neighbors("a", 1) <= graph.neighbors("a", 2) <= graph.neighbors("a", 3)

    def test_matches_bfs_oracle_on_random_graphs(self):
        for seed in (1, 2, 3):
            rng = random.Random(seed)
            ids = [f"n{i:02d}" for i in range(50)]
            entities = [entity(i, f"name {i}") for i in ids]
            edges = []
            for _ in range(120):
                a, b = rng.sample(ids, 2)
                src, dst = sorted((a, b))
                kind = rng.choice(["cooccurs", "similar_to"])
                edges.append(GraphEdge(src, dst, kind, 1.0))
            graph = KnowledgeGraph(entities=entities, chunk_ids=[], edges=edges)

            adjacency: dict[str, set[str]] = {i: set() for i in ids}
            for e in edges:
                adjacency[e.src].add(e.dst)
                adjacency[e.dst].add(e.src)

            def bfs(start, depth):
                seen = {start}
                frontier = {start}
                for _ in range(depth):
                    frontier = {n for f in frontier for n in adjacency[f]} - seen
                    seen |= frontier
                return seen - {start}

            for start in rng.sample(ids, 8):
                for depth in (1, 2, 3):
                    assert graph.neighbors(start, depth) == bfs(start, depth)


class TestGraphPersistence:
    def test_empty_graph_roundtrip(self, tmp_path):
        graph = KnowledgeGraph()
        path = tmp_path / "graph.json"
        save_graph(graph, path)
        assert load_graph(path) == graph

    def test_hundred_node_bit_identical(self, tmp_path):
        rng = random.Random(4)
        entities = [entity(f"e{i:03d}", f"entity {i}") for i in range(100)]
        edges = sorted(
            {
                GraphEdge(*sorted(rng.sample([e.entity_id for e in entities], 2)),
                          "similar_to", round(rng.random(), 6))
                for _ in range(150)
            },
            key=lambda e: (e.kind, e.src, e.dst),
        )
        chunks = [f"c{i:03d}" for i in range(40)]
        graph = KnowledgeGraph(entities=entities, chunk_ids=chunks, edges=list(edges))
        path_a = tmp_path / "a.json"
        path_b = tmp_path / "b.json"
        save_graph(graph, path_a)
        loaded = load_graph(path_a)
        assert loaded == graph
        save_graph(loaded, path_b)
        assert path_a.read_bytes() == path_b.read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "graph.json"
        save_graph(chain_graph(), path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(GraphFormatError):
            load_graph(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "graph.json"
        save_graph(chain_graph(), path)
        payload = json.loads(path.read_text())
        payload["format_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(GraphFormatError, match="version"):
            load_graph(path)


class TestGazetteerIO:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "gaz.ndjson"
        save_gazetteer(SMALL_GAZETTEER, path)
        assert load_gazetteer(path) == sorted(SMALL_GAZETTEER, key=lambda e: e.entity_id)

    def test_default_gazetteer_valid(self):
        gazetteer = default_gazetteer()
        assert len(gazetteer) >= 50
        assert len({e.entity_id for e in gazetteer}) == len(gazetteer)
        for ent in gazetteer:
            assert ent.canonical_name == ent.canonical_name.lower()
            assert len(set(ent.aliases)) == len(ent.aliases)


class TestBuilder:
    def test_builder_produces_consistent_graph(self, tb_chunks):
        builder = KnowledgeGraphBuilder(
            gazetteer=default_gazetteer(),
            embedder=HashedTrigramEmbedder(seed=42, dimension=64),
        ).fit(tb_chunks)
        graph = builder.graph_
        assert set(graph.chunk_ids) == {c.chunk_id for c in tb_chunks}
        # Every mention edge must point at a known chunk and entity.
        entity_ids = {e.entity_id for e in graph.entities}
        for edge in graph.edges:
            if edge.kind == "mentions":
                assert edge.src in entity_ids
                assert edge.dst in set(graph.chunk_ids)

    def test_entity_id_stable_across_rebuilds(self, tb_chunks):
        kwargs = dict(gazetteer=default_gazetteer(),
                      embedder=HashedTrigramEmbedder(seed=42, dimension=64))
        a = KnowledgeGraphBuilder(**kwargs).fit(tb_chunks).graph_
        b = KnowledgeGraphBuilder(**kwargs).fit(tb_chunks).graph_
        assert a == b


class TestGraphConfig:
    def test_threshold_bounds(self):
        from tbgraphrag.graph import GraphConfig

        GraphConfig(linking_threshold=0.0)
        GraphConfig(linking_threshold=1.0)
        with pytest.raises(ValueError):
            GraphConfig(linking_threshold=1.5)
        with pytest.raises(ValueError):
            GraphConfig(cooccur_window="same_document")
