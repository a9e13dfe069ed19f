import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from kgvqa.kgraph import (Entry, IngestError, IngestReport, Kind, Scope, SceneGraph, Source, Triplet,
                          load_bundle, load_knowledge_base, load_scene_graphs, lookup, merge,
                          normalize, save_bundle, synset_label)

from conftest import graph_of, kb_of


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# -- entries -------------------------------------------------------------------

def test_normalize_examples():
    assert normalize("  Keep  out\train ") == "keep_out_rain"
    assert normalize("UsedFor") == "usedfor"
    assert normalize("in (front)") == "in_front"


@given(st.text())
def test_normalize_idempotent(s):
    assert normalize(normalize(s)) == normalize(s)


@given(st.text(min_size=1))
def test_normalized_names_have_no_whitespace_or_uppercase(s):
    n = normalize(s)
    assert n == n.lower() and not any(c.isspace() for c in n) and "(" not in n and ")" not in n


def test_entry_rejects_unnormalized_or_empty():
    with pytest.raises(ValueError):
        Entry("Bike", Kind.ENTITY)
    with pytest.raises(ValueError):
        Entry("", Kind.ENTITY)


def test_same_name_can_be_entity_and_relationship():
    assert Entry.entity("on") != Entry.relationship("on")


def test_synset_label_strips_sense_suffix():
    assert synset_label("bicycle.n.01") == "bicycle"
    assert synset_label("sit_on.v.02") == "sit_on"
    assert synset_label("bicycle") == "bicycle"


def test_triplet_kind_checks():
    man, holds = Entry.entity("man"), Entry.relationship("holds")
    with pytest.raises(ValueError):
        Triplet(man, man, man, Source.image("1")).validate()
    with pytest.raises(ValueError):
        Triplet(holds, holds, man, Source.image("1")).validate()


def test_triplet_json_round_trip():
    t = Triplet(Entry.entity("umbrella"), Entry.relationship("usedfor"), Entry.entity("keep_out_rain"),
                Source.kb("conceptnet"))
    assert t.to_json() == ["umbrella", "usedfor", "keep_out_rain", "kb:conceptnet"]
    assert Triplet.from_json(t.to_json()) == t


def test_unknown_provenance_maps_to_other():
    assert Source.kb("Wikidata") == Source.kb("other")


# -- KB ingestion ------------------------------------------------------------------

def test_load_kb_umbrella_line(tmp_path):
    p = write(tmp_path, "kb.tsv", "umbrella\tUsedFor\tkeep_out_rain\tconceptnet\n")
    kb = load_knowledge_base(p)
    assert [t.names for t in kb.triplets] == [("umbrella", "usedfor", "keep_out_rain")]
    assert kb.triplets[0].source == Source.kb("conceptnet")


def test_load_kb_dedups_identical_lines(tmp_path):
    p = write(tmp_path, "kb.tsv", "a\tisa\tb\n" * 2)
    assert len(load_knowledge_base(p)) == 1


def test_load_kb_skips_comments_and_blank_lines(tmp_path):
    p = write(tmp_path, "kb.tsv", "# header\n\na\tisa\tb\twebchild\n")
    assert len(load_knowledge_base(p)) == 1


def test_load_kb_malformed_line_reports_line_number(tmp_path):
    p = write(tmp_path, "kb.tsv", "a\tisa\tb\nbroken line\n")
    with pytest.raises(IngestError) as info:
        load_knowledge_base(p)
    assert info.value.line == 2 and ":2:" in str(info.value)


def test_load_kb_empty_file_is_an_error(tmp_path):
    with pytest.raises(IngestError):
        load_knowledge_base(write(tmp_path, "kb.tsv", "# nothing\n"))


def test_kb_index_agrees_with_linear_scan(tmp_path):
    rows = [("cup", "usedfor", "drink"), ("water", "usedfor", "drink"), ("milk", "usedfor", "drink"),
            ("cup", "madeof", "glass"), ("cup", "atlocation", "kitchen"), ("desk", "madeof", "wood"),
            ("chair", "madeof", "wood"), ("umbrella", "usedfor", "keep_out_rain"),
            ("milk", "isa", "drink"), ("water", "hasproperty", "wet")]
    p = write(tmp_path, "kb.tsv", "".join("\t".join(r) + "\n" for r in rows))
    kb = load_knowledge_base(p)
    assert len(kb) == 10
    idx = kb.index
    for t in kb.triplets:
        assert set(idx.match(t.subject, t.relation, None)) == {u for u in kb.triplets if u.subject == t.subject and u.relation == t.relation}
        assert set(idx.match(None, t.relation, t.object)) == {u for u in kb.triplets if u.relation == t.relation and u.object == t.object}
        assert set(idx.match(t.subject, None, t.object)) == {u for u in kb.triplets if u.subject == t.subject and u.object == t.object}
    # index cardinalities sum to the number of triplets
    for table in (idx.by_subject_relation, idx.by_relation_object, idx.by_subject_object):
        assert sum(len(v) for v in table.values()) == len(kb)


# -- scene ingestion ---------------------------------------------------------------

def test_bike_with_bicycle_synset_becomes_bicycle(tmp_path):
    doc = [{"image_id": 1, "objects": [{"object_id": 1, "name": "bike", "synset": "bicycle.n.01"},
                                       {"object_id": 2, "name": "man", "synset": "man.n.01"}],
            "relationships": [{"subject_id": 2, "predicate_synset": "rides", "object_id": 1}]}]
    scene, = load_scene_graphs(write(tmp_path, "s.json", json.dumps(doc)))
    assert Entry.entity("bicycle") in scene.objects
    assert scene.triplets[0].names == ("man", "rides", "bicycle")


def test_image_with_no_relationships(tmp_path):
    doc = [{"image_id": "x", "objects": [{"object_id": 0, "synset": "dog"}], "relationships": []}]
    scene, = load_scene_graphs(write(tmp_path, "s.json", json.dumps(doc)))
    assert scene.triplets == () and scene.objects == {Entry.entity("dog")}


def test_three_image_fixture_hand_count(tmp_path):
    # 12 relationships, 2 of them lacking a predicate synset: 10 survive.
    def obj(i, syn):
        return {"object_id": i, "synset": syn}

    objs = [obj(0, "man"), obj(1, "horse"), obj(2, "hat"), obj(3, "grass")]
    preds = ["rides", "wears", "on", "near"]
    images = []
    for img in range(3):
        rels = [{"subject_id": s, "predicate_synset": preds[(s + img) % 4], "object_id": o}
                for s, o in ((0, 1), (0, 2), (1, 3), (2, 3))]
        images.append({"image_id": f"i{img}", "objects": objs, "relationships": rels})
    del images[0]["relationships"][0]["predicate_synset"]
    del images[2]["relationships"][3]["predicate_synset"]
    report = IngestReport()
    scenes = load_scene_graphs(write(tmp_path, "s.json", json.dumps({"images": images})), report)
    assert sum(len(s.triplets) for s in scenes) == 10
    assert report.relationships_without_synset == 2 and report.triplets == 10


def test_dangling_relationship_dropped_and_counted(tmp_path):
    doc = [{"image_id": 5, "objects": [{"object_id": 0, "synset": "man"}, {"object_id": 1}],
            "relationships": [{"subject_id": 0, "predicate_synset": "holds", "object_id": 1},
                              {"subject_id": 0, "predicate_synset": "holds", "object_id": 99}]}]
    report = IngestReport()
    scene, = load_scene_graphs(write(tmp_path, "s.json", json.dumps(doc)), report)
    assert scene.triplets == ()
    assert report.objects_without_synset == 1 and report.dangling_relationships == 2


def test_duplicate_relationships_collapse(tmp_path):
    rel = {"subject_id": 0, "predicate_synset": "holds", "object_id": 1}
    doc = [{"image_id": 1, "objects": [{"object_id": 0, "synset": "man"}, {"object_id": 1, "synset": "cup"}],
            "relationships": [rel, rel]}]
    scene, = load_scene_graphs(write(tmp_path, "s.json", json.dumps(doc)))
    assert len(scene.triplets) == 1


def test_json_lines_scene_document(tmp_path):
    lines = [json.dumps({"image_id": i, "objects": [], "relationships": []}) for i in range(3)]
    assert len(load_scene_graphs(write(tmp_path, "s.jsonl", "\n".join(lines)))) == 3


@pytest.mark.parametrize("doc", [[{"objects": []}], [{"image_id": 1}, {"image_id": 1}]])
def test_scene_errors(tmp_path, doc):
    with pytest.raises(IngestError):
        load_scene_graphs(write(tmp_path, "s.json", json.dumps(doc)))


def test_empty_scene_file_is_an_error(tmp_path):
    with pytest.raises(IngestError):
        load_scene_graphs(write(tmp_path, "s.json", ""))


def test_scene_graph_invariants():
    src = Source.image("a")
    t = Triplet(Entry.entity("man"), Entry.relationship("holds"), Entry.entity("cup"), src)
    with pytest.raises(ValueError):
        SceneGraph("a", frozenset({Entry.entity("man")}), (t,))
    with pytest.raises(ValueError):
        SceneGraph("b", frozenset({Entry.entity("man"), Entry.entity("cup")}), (t,))


# -- merge and lookup ---------------------------------------------------------------

def test_merge_shares_umbrella_entry():
    g = graph_of([("boy", "holds", "umbrella")], [("umbrella", "usedfor", "keep_out_rain")])
    umbrella = Entry.entity("umbrella")
    assert umbrella in g.entry_table
    assert sum(1 for e in g.entry_table if e == umbrella) == 1
    assert g.match(Scope.IMAGE, None, Entry.relationship("holds"), umbrella)
    assert g.match(Scope.KB, umbrella, Entry.relationship("usedfor"), None)
    assert {t.scope for t in g.image_triplets} == {Scope.IMAGE}
    assert {t.scope for t in g.kb.triplets} == {Scope.KB}


def test_disjoint_merge_sizes():
    g = graph_of([("man", "holds", "cup")], [("tree", "hasa", "leaf")])
    assert len(g.entry_table) == len(g.scene.entries()) + len(g.kb.entries) == 6


def test_shared_entries_match_set_union():
    scene = SceneGraph.build("i", [("man", "holds", "cup"), ("cup", "on", "desk"), ("dog", "near", "man")])
    kb = kb_of(("cup", "usedfor", "drink"), ("desk", "madeof", "wood"), ("man", "isa", "person"),
               ("dog", "isa", "animal"))
    g = merge(scene, kb)
    assert len(scene.entries() & kb.entries) == 4
    assert set(g.entry_table) == scene.entries() | kb.entries
    assert len(g.entry_table) == len(scene.entries() | kb.entries)


def test_merge_is_pure_and_repeatable():
    scene = SceneGraph.build("i", [("man", "holds", "cup")])
    kb = kb_of(("cup", "usedfor", "drink"))
    before = (scene.triplets, kb.triplets)
    assert merge(scene, kb) == merge(scene, kb)
    assert (scene.triplets, kb.triplets) == before
    assert merge(scene, kb).kb is kb


def test_lookup_drink_usage(drink_graph):
    assert [e.name for e in lookup(drink_graph, (None, "usedfor", "drink"), Scope.KB)] == ["milk", "water"]
    assert lookup(drink_graph, (None, "usedfor", "drink"), Scope.IMAGE) == ()


def test_lookup_no_match(desk_graph):
    assert lookup(desk_graph, ("boy", None, "umbrella"), Scope.IMAGE) == ()


@pytest.mark.parametrize("pattern", [("a", "b", "c"), (None, None, "c"), (None, None, None)])
def test_lookup_requires_exactly_one_unknown(desk_graph, pattern):
    with pytest.raises(ValueError):
        lookup(desk_graph, pattern, Scope.IMAGE)


def _scan(graph, pattern, scope):
    pool = graph.image_triplets if scope is Scope.IMAGE else graph.kb.triplets
    slot = pattern.index(None)
    return sorted({t.names[slot] for t in pool
                   if all(p is None or p == n for p, n in zip(pattern, t.names))})


def _random_graph(rng, n_image, n_kb):
    ents = [f"e{i}" for i in range(8)]
    rels = [f"r{i}" for i in range(4)]
    row = lambda: (rng.choice(ents), rng.choice(rels), rng.choice(ents))
    return graph_of([row() for _ in range(n_image)], [row() for _ in range(n_kb)]), ents, rels


def test_lookup_all_slot_scope_combinations_match_scan():
    rng = random.Random(3)
    g, ents, rels = _random_graph(rng, 10, 10)
    for s in ents:
        for r in rels:
            for o in ents:
                for scope in (Scope.IMAGE, Scope.KB):
                    for pattern in ((None, r, o), (s, None, o), (s, r, None)):
                        got = [e.name for e in lookup(g, pattern, scope)]
                        assert got == _scan(g, pattern, scope)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 100), st.integers(0, 100))
def test_lookup_equals_brute_force_property(seed, n_image, n_kb):
    rng = random.Random(seed)
    g, ents, rels = _random_graph(rng, n_image, max(n_kb, 1))
    for _ in range(20):
        pattern = [rng.choice(ents), rng.choice(rels), rng.choice(ents)]
        pattern[rng.randrange(3)] = None
        for scope in (Scope.IMAGE, Scope.KB):
            assert [e.name for e in lookup(g, tuple(pattern), scope)] == _scan(g, tuple(pattern), scope)


def test_source_separation():
    g = graph_of([("man", "holds", "cup")], [("man", "holds", "phone")])
    assert [e.name for e in lookup(g, ("man", "holds", None), Scope.IMAGE)] == ["cup"]
    assert [e.name for e in lookup(g, ("man", "holds", None), Scope.KB)] == ["phone"]


# -- bundles ------------------------------------------------------------------------

def test_bundle_round_trip(tmp_path, small_corpus):
    kb = small_corpus.knowledge_base()
    scenes = small_corpus.scene_graphs()
    path = tmp_path / "b.json"
    save_bundle(path, kb, scenes, small_corpus.report)
    kb2, scenes2 = load_bundle(path)
    assert kb2 == kb
    assert {s.image_id: s for s in scenes2} == {s.image_id: s for s in scenes}
    g1, g2 = merge(scenes[0], kb), merge(next(s for s in scenes2 if s.image_id == scenes[0].image_id), kb2)
    assert g1 == g2
    t = g1.image_triplets[0]
    assert lookup(g1, (t.subject, t.relation, None), Scope.IMAGE) == lookup(g2, (t.subject, t.relation, None), Scope.IMAGE)


def test_bad_bundle(tmp_path):
    with pytest.raises(IngestError):
        load_bundle(write(tmp_path, "b.json", '{"format": "nope"}'))
