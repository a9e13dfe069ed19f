"""Entries, triplets, the commonsense knowledge base, scene graphs and their
per-image merge.

Everything here is immutable once built. A single :class:`KnowledgeBase` is
shared by reference between all :class:`ImageKnowledgeGraph` objects; only
image triplets are stored per image.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

logger = logging.getLogger(__name__)

PROVENANCES = ("webchild", "conceptnet", "dbpedia", "other")

_WS = re.compile(r"\s+")
_WORDNET_SENSE = re.compile(r"\.[nvars]\.\d+$")


class IngestError(Exception):
    """Raised when an input file cannot be turned into graph data."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class Kind(str, enum.Enum):
    ENTITY = "entity"
    RELATIONSHIP = "relationship"


class Scope(str, enum.Enum):
    IMAGE = "image"
    KB = "kb"


def normalize(name: str) -> str:
    """Canonical synset string: lowercase, whitespace runs joined by ``_``.

    Parentheses are removed so that names never clash with layout separators.
    """
    text = _WS.sub("_", str(name).strip().lower())
    return text.replace("(", "").replace(")", "")


def synset_label(synset: str) -> str:
    """Map a scene-graph synset such as ``bicycle.n.01`` to its entry name."""
    return normalize(_WORDNET_SENSE.sub("", str(synset).strip()))


@dataclass(frozen=True, order=True)
class Entry:
    name: str
    kind: Kind

    def __post_init__(self):
        if not self.name:
            raise ValueError("entry name must be non-empty")
        if self.name != normalize(self.name):
            raise ValueError(f"entry name {self.name!r} is not normalized")

    @classmethod
    def entity(cls, name: str) -> "Entry":
        return cls(normalize(name), Kind.ENTITY)

    @classmethod
    def relationship(cls, name: str) -> "Entry":
        return cls(normalize(name), Kind.RELATIONSHIP)

    @property
    def surface(self) -> str:
        return self.name.replace("_", " ")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Source:
    scope: Scope
    tag: str  # image id for IMAGE, provenance for KB

    @classmethod
    def image(cls, image_id) -> "Source":
        return cls(Scope.IMAGE, str(image_id))

    @classmethod
    def kb(cls, provenance: str = "other") -> "Source":
        provenance = (provenance or "other").strip().lower()
        if provenance not in PROVENANCES:
            provenance = "other"
        return cls(Scope.KB, provenance)

    def __str__(self):
        return f"{self.scope.value}:{self.tag}"

    @classmethod
    def parse(cls, text: str) -> "Source":
        scope, _, tag = text.partition(":")
        if scope == Scope.IMAGE.value:
            return cls.image(tag)
        if scope == Scope.KB.value:
            return cls.kb(tag)
        raise ValueError(f"bad source tag {text!r}")


@dataclass(frozen=True)
class Triplet:
    subject: Entry
    relation: Entry
    object: Entry
    source: Optional[Source] = None

    def validate(self) -> "Triplet":
        if self.subject.kind is not Kind.ENTITY or self.object.kind is not Kind.ENTITY:
            raise ValueError(f"subject and object must be entities: {self}")
        if self.relation.kind is not Kind.RELATIONSHIP:
            raise ValueError(f"relation must be a relationship: {self}")
        return self

    @property
    def names(self) -> tuple[str, str, str]:
        return (self.subject.name, self.relation.name, self.object.name)

    @property
    def scope(self) -> Scope:
        return self.source.scope

    def to_json(self) -> list:
        return [*self.names, str(self.source)]

    @classmethod
    def from_json(cls, row: Sequence) -> "Triplet":
        s, r, o, src = row
        return cls(Entry.entity(s), Entry.relationship(r), Entry.entity(o), Source.parse(src)).validate()

    def __str__(self):
        return "({}, {}, {})".format(*self.names)

    def __lt__(self, other):
        return _triplet_key(self) < _triplet_key(other)


def _triplet_key(t: Triplet):
    return (t.names, t.source.scope.value, t.source.tag)


class TripletIndex:
    """Single-unknown-slot lookup over a fixed collection of triplets."""

    def __init__(self, triplets: Iterable[Triplet]):
        self.triplets: tuple[Triplet, ...] = tuple(sorted(set(triplets), key=_triplet_key))
        by_sr, by_ro, by_so, by_s = (defaultdict(list) for _ in range(4))
        for t in self.triplets:
            by_sr[t.subject, t.relation].append(t)
            by_ro[t.relation, t.object].append(t)
            by_so[t.subject, t.object].append(t)
            by_s[t.subject].append(t)
        self.by_subject_relation = {k: tuple(v) for k, v in by_sr.items()}
        self.by_relation_object = {k: tuple(v) for k, v in by_ro.items()}
        self.by_subject_object = {k: tuple(v) for k, v in by_so.items()}
        self.by_subject = {k: tuple(v) for k, v in by_s.items()}

    def __len__(self):
        return len(self.triplets)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self.triplets)

    def match(self, subject=None, relation=None, object=None) -> tuple[Triplet, ...]:
        unknown = [x is None for x in (subject, relation, object)]
        if sum(unknown) != 1:
            raise ValueError("pattern must leave exactly one of subject/relation/object unknown")
        if subject is None:
            return self.by_relation_object.get((relation, object), ())
        if relation is None:
            return self.by_subject_object.get((subject, object), ())
        return self.by_subject_relation.get((subject, relation), ())

    def entries(self) -> frozenset:
        out = set()
        for t in self.triplets:
            out.update((t.subject, t.relation, t.object))
        return frozenset(out)


class KnowledgeBase:
    """Deduplicated, indexed set of KB-sourced triplets."""

    def __init__(self, triplets: Iterable[Triplet]):
        triplets = list(triplets)
        for t in triplets:
            t.validate()
            if t.source is None or t.source.scope is not Scope.KB:
                raise ValueError(f"knowledge base triplet without KB source: {t}")
        self.index = TripletIndex(triplets)
        self.entries: frozenset = self.index.entries()

    @property
    def triplets(self) -> tuple[Triplet, ...]:
        return self.index.triplets

    def __len__(self):
        return len(self.index)

    def __eq__(self, other):
        return isinstance(other, KnowledgeBase) and self.triplets == other.triplets

    def __repr__(self):
        return f"KnowledgeBase({len(self)} facts, {len(self.entries)} entries)"


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    objects: frozenset
    triplets: tuple

    def __post_init__(self):
        for t in self.triplets:
            if t.source != Source.image(self.image_id):
                raise ValueError(f"triplet {t} does not belong to image {self.image_id}")
            if t.subject not in self.objects or t.object not in self.objects:
                raise ValueError(f"triplet {t} references an object missing from image {self.image_id}")

    @classmethod
    def build(cls, image_id, triplets: Iterable[tuple[str, str, str]], objects: Iterable[str] = ()) -> "SceneGraph":
        """Convenience constructor from plain name triples."""
        image_id = str(image_id)
        src = Source.image(image_id)
        trips = set()
        objs = {Entry.entity(o) for o in objects}
        for s, r, o in triplets:
            t = Triplet(Entry.entity(s), Entry.relationship(r), Entry.entity(o), src)
            trips.add(t)
            objs.update((t.subject, t.object))
        return cls(image_id, frozenset(objs), tuple(sorted(trips, key=_triplet_key)))

    def entries(self) -> frozenset:
        out = set(self.objects)
        out.update(t.relation for t in self.triplets)
        return frozenset(out)


@dataclass
class IngestReport:
    images: int = 0
    objects_without_synset: int = 0
    relationships_without_synset: int = 0
    dangling_relationships: int = 0
    duplicate_triplets: int = 0
    triplets: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class EntryTable:
    """(name, kind)-keyed union of an image's entries with the shared KB entries."""

    def __init__(self, image_entries: frozenset, kb_entries: frozenset):
        self.kb_entries = kb_entries
        self.image_only = frozenset(e for e in image_entries if e not in kb_entries)

    def __contains__(self, entry):
        return entry in self.image_only or entry in self.kb_entries

    def __len__(self):
        return len(self.image_only) + len(self.kb_entries)

    def __iter__(self) -> Iterator[Entry]:
        yield from self.image_only
        yield from self.kb_entries

    def __eq__(self, other):
        return (isinstance(other, EntryTable) and self.image_only == other.image_only
                and self.kb_entries == other.kb_entries)


class ImageKnowledgeGraph:
    """An image's scene graph merged with the shared knowledge base."""

    def __init__(self, scene: SceneGraph, kb: KnowledgeBase):
        self.image_id = scene.image_id
        self.scene = scene
        self.kb = kb
        self.image_index = TripletIndex(scene.triplets)
        self.entry_table = EntryTable(scene.entries(), kb.entries)
        ents = set()
        for t in scene.triplets:
            ents.update((t.subject, t.object))
        self.image_entities = frozenset(ents)

    @property
    def image_triplets(self) -> tuple[Triplet, ...]:
        return self.image_index.triplets

    def index(self, scope: Scope) -> TripletIndex:
        return self.image_index if scope is Scope.IMAGE else self.kb.index

    def match(self, scope: Scope, subject=None, relation=None, object=None) -> tuple[Triplet, ...]:
        return self.index(scope).match(subject, relation, object)

    def __eq__(self, other):
        return (isinstance(other, ImageKnowledgeGraph) and self.image_id == other.image_id
                and self.image_triplets == other.image_triplets
                and self.entry_table == other.entry_table and self.kb == other.kb)

    def __repr__(self):
        return f"ImageKnowledgeGraph({self.image_id!r}, {len(self.image_triplets)} image triplets)"


def merge(scene: SceneGraph, kb: KnowledgeBase) -> ImageKnowledgeGraph:
    return ImageKnowledgeGraph(scene, kb)


EntryLike = Union[Entry, str, None]
_SLOT_KINDS = (Kind.ENTITY, Kind.RELATIONSHIP, Kind.ENTITY)


def lookup(graph: ImageKnowledgeGraph, pattern: Sequence[EntryLike], scope: Scope) -> tuple[Entry, ...]:
    """Entries filling the single unknown slot of ``pattern`` among ``scope``'s triplets.

    ``pattern`` is ``(subject, relation, object)`` with ``None`` marking the
    unknown slot. Plain strings are normalized into entries of the slot's kind.
    """
    if len(pattern) != 3:
        raise ValueError("pattern must have three slots")
    bound = []
    for value, kind in zip(pattern, _SLOT_KINDS):
        if value is None or isinstance(value, Entry):
            bound.append(value)
        else:
            bound.append(Entry(normalize(value), kind))
    hits = graph.match(Scope(scope), *bound)
    slot = [v is None for v in bound].index(True)
    return tuple(sorted({(t.subject, t.relation, t.object)[slot] for t in hits}))


# -- ingestion ----------------------------------------------------------------

def load_knowledge_base(path) -> KnowledgeBase:
    path = str(path)
    triplets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise IngestError(f"expected at least 3 tab-separated fields, got {len(fields)}", path, lineno)
            s, r, o = (normalize(f) for f in fields[:3])
            if not (s and r and o):
                raise IngestError("empty subject, relation or object", path, lineno)
            prov = fields[3] if len(fields) > 3 else "other"
            triplets.append(Triplet(Entry(s, Kind.ENTITY), Entry(r, Kind.RELATIONSHIP),
                                    Entry(o, Kind.ENTITY), Source.kb(prov)))
    if not triplets:
        raise IngestError("knowledge base contains no facts", path)
    return KnowledgeBase(triplets)


def _read_records(path: str) -> list:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    data.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise IngestError(f"invalid JSON: {exc.msg}", path, lineno) from None
    if isinstance(data, dict):
        data = data.get("images", [data])
    if not isinstance(data, list):
        raise IngestError("scene-graph document must be a list of image records", path)
    return data


def _object_synset(obj: Mapping) -> Optional[str]:
    syn = obj.get("synset")
    if syn is None and obj.get("synsets"):
        syn = obj["synsets"][0]
    if syn is None or not str(syn).strip():
        return None
    return synset_label(syn)


def scene_from_record(rec: Mapping, report: Optional[IngestReport] = None) -> SceneGraph:
    report = report if report is not None else IngestReport()
    if rec.get("image_id") is None or str(rec.get("image_id")).strip() == "":
        raise IngestError("image record without image_id")
    image_id = str(rec["image_id"])
    src = Source.image(image_id)
    objects = {}
    for obj in rec.get("objects", []):
        label = _object_synset(obj)
        if not label:
            report.objects_without_synset += 1
            continue
        objects[obj.get("object_id")] = Entry(label, Kind.ENTITY)
    triplets = set()
    for rel in rec.get("relationships", []):
        pred = rel.get("predicate_synset", rel.get("synset"))
        if pred is None or not normalize(pred):
            report.relationships_without_synset += 1
            continue
        subj = objects.get(rel.get("subject_id"))
        obj = objects.get(rel.get("object_id"))
        if subj is None or obj is None:
            report.dangling_relationships += 1
            continue
        t = Triplet(subj, Entry(synset_label(pred), Kind.RELATIONSHIP), obj, src)
        if t in triplets:
            report.duplicate_triplets += 1
        triplets.add(t)
    report.images += 1
    report.triplets += len(triplets)
    return SceneGraph(image_id, frozenset(objects.values()), tuple(sorted(triplets, key=_triplet_key)))


def load_scene_graphs(path, report: Optional[IngestReport] = None) -> list[SceneGraph]:
    """Read a JSON (or JSON-lines) scene-graph document.

    Objects and relationships lacking a synset are skipped, relationships that
    reference unknown object ids are dropped; both are tallied in ``report``.
    """
    path = str(path)
    report = report if report is not None else IngestReport()
    scenes = []
    seen = set()
    for i, rec in enumerate(_read_records(path)):
        try:
            scene = scene_from_record(rec, report)
        except IngestError as exc:
            raise IngestError(f"record {i}: {exc}", path) from None
        if scene.image_id in seen:
            raise IngestError(f"duplicate image_id {scene.image_id!r}", path)
        seen.add(scene.image_id)
        scenes.append(scene)
    if not scenes:
        raise IngestError("scene-graph document contains no images", path)
    if report.dangling_relationships:
        logger.warning("%s: dropped %d relationships with unknown object ids",
                       path, report.dangling_relationships)
    return scenes


# -- bundles --------------------------------------------------------------------

BUNDLE_FORMAT = "kgvqa-graph-bundle/1"


def bundle_to_dict(kb: KnowledgeBase, scenes: Sequence[SceneGraph],
                   report: Optional[IngestReport] = None) -> dict:
    return {
        "format": BUNDLE_FORMAT,
        "kb": [t.to_json() for t in kb.triplets],
        "scenes": [{"image_id": sc.image_id,
                    "objects": sorted(e.name for e in sc.objects),
                    "triplets": [list(t.names) for t in sc.triplets]}
                   for sc in sorted(scenes, key=lambda sc: sc.image_id)],
        "report": report.to_dict() if report is not None else None,
    }


def bundle_from_dict(data: Mapping) -> tuple[KnowledgeBase, list[SceneGraph]]:
    if not isinstance(data, Mapping) or data.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"not a graph bundle (expected format {BUNDLE_FORMAT!r})")
    kb = KnowledgeBase(Triplet.from_json(row) for row in data["kb"])
    scenes = [SceneGraph.build(sc["image_id"], sc["triplets"], sc.get("objects", ())) for sc in data["scenes"]]
    return kb, scenes


def save_bundle(path, kb: KnowledgeBase, scenes: Sequence[SceneGraph],
                report: Optional[IngestReport] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(bundle_to_dict(kb, scenes, report), fh, sort_keys=True)
        fh.write("\n")


def load_bundle(path) -> tuple[KnowledgeBase, list[SceneGraph]]:
    """Reload a bundle written by :func:`save_bundle`; indexes are rebuilt."""
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return bundle_from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"bad graph bundle: {exc}", path) from None
