"""Seeded synthetic corpora: a commonsense KB file plus a scene-graph document.

The vocabulary is small but realistic enough to exercise every qtype, the
validity filter and both bias constraints.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

from .kgraph import (Entry, IngestReport, Kind, KnowledgeBase, Source, Triplet,
                     merge, normalize, scene_from_record)

OBJECTS = [
    "man", "woman", "boy", "girl", "dog", "cat", "horse", "bird", "umbrella", "cup",
    "desk", "table", "chair", "bicycle", "car", "bus", "tree", "grass", "shirt", "hat",
    "jacket", "plate", "bowl", "bottle", "phone", "laptop", "book", "bag", "ball", "frisbee",
    "kite", "surfboard", "skateboard", "banana", "apple", "orange", "pizza", "sandwich", "cake", "fork",
    "knife", "spoon", "window", "door", "lamp", "bed", "couch", "pillow", "clock", "vase",
    "flower", "fence", "bench", "sign", "pole", "street", "sidewalk", "building", "train", "boat",
    "helmet", "glove", "shoe", "sock", "glasses", "watch", "tie", "backpack", "suitcase", "camera",
    "guitar", "racket", "bat", "giraffe", "elephant", "zebra", "sheep", "cow", "truck", "motorcycle",
]
# Surface names that scene annotators use for a synset.
ALIASES = {"bicycle": "bike", "couch": "sofa", "phone": "cellphone", "motorcycle": "motorbike"}

IMAGE_RELATIONS = [
    "holds", "wears", "rides", "carries", "eats", "watches", "sits_on", "looks_at", "pulls",
    "on", "near", "under", "behind", "in_front_of", "next_to", "inside",
]
KB_RELATIONS = [
    "usedfor", "capableof", "atlocation", "isa", "partof", "madeof", "hasproperty", "hasa",
    "receivesaction", "createdby", "symbolof", "locatednear", "relatedto", "desires", "causes",
    "similarto",
]
_VERBS = [
    "keep", "carry", "hold", "cut", "eat", "drink", "play", "read", "write", "clean", "cook", "wash",
    "store", "protect", "decorate", "cover", "open", "close", "light", "heat", "cool", "move",
    "travel", "sleep", "sit", "watch", "call", "paint", "build", "fix",
]
_NOUNS = [
    "rain", "water", "food", "music", "paper", "dirt", "heat", "light", "wind", "sand", "snow",
    "clothes", "tools", "toys", "books", "dishes", "money", "letters", "games", "plants", "seeds",
    "metal", "wood", "glass", "plastic", "fabric", "leather", "stone", "bread", "fruit", "tea",
    "coffee", "milk", "juice", "soup", "rice", "shade", "warmth", "noise", "time", "luck", "speed",
    "friends", "family", "art", "sport", "city", "farm", "forest", "ocean", "road", "room",
]
_PROVENANCES = ("conceptnet", "webchild", "dbpedia")


def concept_pool() -> list[str]:
    return [f"{v}_{n}" for v in _VERBS for n in _NOUNS]


@dataclass
class Corpus:
    kb_rows: list                      # (subject, relation, object, provenance)
    scenes: list                       # scene-graph records
    report: IngestReport = field(default_factory=IngestReport)

    def write(self, directory) -> tuple[str, str]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        kb_path = directory / "kb.tsv"
        scenes_path = directory / "scenes.json"
        with open(kb_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# subject\trelation\tobject\tprovenance\n")
            for row in self.kb_rows:
                fh.write("\t".join(row) + "\n")
        with open(scenes_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.scenes, fh, indent=1)
            fh.write("\n")
        return os.fspath(kb_path), os.fspath(scenes_path)

    def knowledge_base(self) -> KnowledgeBase:
        return KnowledgeBase(
            Triplet(Entry(normalize(s), Kind.ENTITY), Entry(normalize(r), Kind.RELATIONSHIP),
                    Entry(normalize(o), Kind.ENTITY), Source.kb(p))
            for s, r, o, p in self.kb_rows)

    def scene_graphs(self) -> list:
        report = IngestReport()
        scenes = [scene_from_record(rec, report) for rec in self.scenes]
        self.report = report
        return scenes

    def graphs(self) -> dict:
        kb = self.knowledge_base()
        return {s.image_id: merge(s, kb) for s in self.scene_graphs()}


def _hop_count(rng: random.Random) -> int:
    x = rng.random()
    return 1 if x < 0.7 else 2 if x < 0.9 else 3


def make_corpus(n_images: int = 240, kb_facts: int = 5200, seed: int = 0,
                objects_per_image: tuple = (6, 10), relations_per_image: tuple = (10, 15),
                missing_synset_rate: float = 0.03) -> Corpus:
    rng = random.Random(seed)
    pool = concept_pool()
    rows = set()
    # Facts about things that appear in images; most (subject, relation) pairs have one object.
    for subj in OBJECTS:
        for rel in KB_RELATIONS:
            if rng.random() < 0.85:
                for _ in range(_hop_count(rng)):
                    obj = rng.choice(OBJECTS) if rng.random() < 0.08 else rng.choice(pool)
                    if obj != subj:
                        rows.add((subj, rel, obj))
    # Background facts between concepts that never appear in an image.
    while len(rows) < kb_facts:
        rows.add((rng.choice(pool), rng.choice(KB_RELATIONS), rng.choice(pool)))
    kb_rows = [(s, r, o, rng.choice(_PROVENANCES)) for s, r, o in sorted(rows)]

    weights = [1.0 / (1 + i) ** 0.5 for i in range(len(OBJECTS))]
    scenes = []
    for i in range(n_images):
        k = rng.randint(*objects_per_image)
        classes = rng.choices(OBJECTS, weights=weights, k=k)
        objects = []
        for j, cls in enumerate(classes):
            obj = {"object_id": j, "name": ALIASES.get(cls, cls)}
            if rng.random() >= missing_synset_rate:
                obj["synset"] = f"{cls}.n.01"
            objects.append(obj)
        rels = []
        for _ in range(rng.randint(*relations_per_image)):
            a, b = rng.sample(range(k), 2)
            rel = {"subject_id": a, "object_id": b}
            if rng.random() >= missing_synset_rate:
                rel["predicate_synset"] = rng.choice(IMAGE_RELATIONS)
            rels.append(rel)
        scenes.append({"image_id": f"img{i:05d}", "objects": objects, "relationships": rels})
    return Corpus(kb_rows, scenes)


def make_constraint_corpus(n_images: int = 300) -> Corpus:
    """Every image repeats the same man-holds-umbrella scene, so the same KB
    fact and the same KB-related answers recur in every image."""
    kb_rows = [
        ("umbrella", "usedfor", "keep_out_rain", "conceptnet"),
        ("umbrella", "madeof", "fabric", "conceptnet"),
        ("raincoat", "usedfor", "keep_out_rain", "conceptnet"),
        ("dog", "capableof", "bark", "conceptnet"),
        ("grass", "hasproperty", "green", "webchild"),
    ]
    scenes = []
    for i in range(n_images):
        scenes.append({
            "image_id": f"rep{i:04d}",
            "objects": [{"object_id": 0, "synset": "man.n.01"}, {"object_id": 1, "synset": "umbrella.n.01"},
                        {"object_id": 2, "synset": "dog.n.01"}, {"object_id": 3, "synset": "grass.n.01"}],
            "relationships": [{"subject_id": 0, "predicate_synset": "holds", "object_id": 1},
                              {"subject_id": 2, "predicate_synset": "on", "object_id": 3}],
        })
    return Corpus(kb_rows, scenes)
