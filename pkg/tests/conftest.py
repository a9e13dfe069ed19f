import random

import pytest

from kgvqa.kgraph import Entry, Kind, KnowledgeBase, SceneGraph, Source, Triplet, merge
from kgvqa.qgen import GenerationConfig, generate
from kgvqa.query import Apply, Leaf, QuerySymbol
from kgvqa.synth import make_corpus
from kgvqa.templates import default_templates


def kb_of(*rows, provenance="conceptnet"):
    return KnowledgeBase(Triplet(Entry.entity(s), Entry.relationship(r), Entry.entity(o), Source.kb(provenance))
                         for s, r, o in rows)


def graph_of(image_rows, kb_rows=(), image_id="img1", objects=()):
    return merge(SceneGraph.build(image_id, image_rows, objects), kb_of(*kb_rows))


@pytest.fixture
def desk_graph():
    """Image: cup on desk, boy throws frisbee, man holds umbrella; KB: usage facts."""
    return graph_of(
        [("cup", "on", "desk"), ("boy", "throw", "frisbee"), ("man", "holds", "umbrella")],
        [("cup", "usedfor", "drink"), ("umbrella", "usedfor", "keep_out_rain"),
         ("raincoat", "usedfor", "keep_out_rain")],
    )


@pytest.fixture
def drink_graph():
    return graph_of([("girl", "holds", "glass")],
                    [("water", "usedfor", "drink"), ("milk", "usedfor", "drink")])


@pytest.fixture(scope="session")
def templates():
    return default_templates()


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(n_images=40, kb_facts=1500, seed=7)


@pytest.fixture(scope="session")
def small_graphs(small_corpus):
    return small_corpus.graphs()


@pytest.fixture(scope="session")
def small_dataset(small_graphs, templates):
    return generate(small_graphs.values(), templates, GenerationConfig(seed=11, max_chains=15))


# -- an exhaustive evaluator that shares nothing with the executor's indexes --------

SLOTS = {"ab": (1, (0, 2)), "ar": (2, (0, 1)), "rb": (0, (1, 2))}


class Unknown(Exception):
    pass


def brute_force(layout, graph):
    """Answer names by scanning every triplet of the node's scope at each node."""

    def kinds(query):
        unknown, (a, b) = SLOTS[query]
        k = ("entity", "relationship", "entity")
        return k[a], k[b]

    def ev(node, kind):
        if isinstance(node, Leaf):
            names = {e.name for e in graph.entry_table if e.kind.value == kind}
            if node.name not in names:
                raise Unknown(node.name)
            return {node.name}
        sym = node.symbol.value
        query, scope = sym[2:4], sym[-1]
        lk, rk = kinds(query)
        left, right = ev(node.left, lk), ev(node.right, rk)
        pool = graph.image_triplets if scope == "I" else graph.kb.triplets
        unknown, (a, b) = SLOTS[query]
        out = set()
        for t in pool:
            names = t.names
            if names[a] in left and names[b] in right:
                out.add(names[unknown])
        return out

    return ev(layout, None)


# -- random graphs and layouts ------------------------------------------------------

ENTS = [f"e{i}" for i in range(10)]
RELS = [f"r{i}" for i in range(5)]


def random_graph(rng, max_triplets=200):
    n = rng.randint(1, max_triplets)
    n_img = rng.randint(0, n - 1)
    row = lambda: (rng.choice(ENTS), rng.choice(RELS), rng.choice(ENTS))
    return graph_of([row() for _ in range(n_img)], [row() for _ in range(n - n_img)])


def random_layout(rng, kind=Kind.ENTITY, depth=3):
    if depth == 0 or (kind is not None and rng.random() < 0.35):
        return Leaf(rng.choice(ENTS if kind is Kind.ENTITY else RELS) if kind else rng.choice(ENTS))
    choices = [s for s in QuerySymbol if kind is None or s.output_kind is kind]
    sym = rng.choice(choices)
    lk, rk = sym.input_kinds
    return Apply(sym, random_layout(rng, lk, depth - 1), random_layout(rng, rk, depth - 1))




def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
