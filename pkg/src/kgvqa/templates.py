"""Question templates, their layout skeletons and a small surface-form lexicon.

A pattern is lowercase text with placeholders such as ``<A>`` or ``<R1:ing>``;
the optional suffix picks a surface form from the lexicon (falling back to the
base form, then to the entry name with underscores read as spaces).
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator, Mapping, Optional, Sequence

from .executor import GroundingMode
from .kgraph import Entry, Kind, Scope, normalize
from .query import Apply, Layout, Leaf, QuerySymbol, count_applies, parse_layout, serialize, substitute

SLOTS = ("A", "R", "B", "R1", "R2", "C")
SLOT_KIND = {"A": Kind.ENTITY, "B": Kind.ENTITY, "C": Kind.ENTITY,
             "R": Kind.RELATIONSHIP, "R1": Kind.RELATIONSHIP, "R2": Kind.RELATIONSHIP}

# Given slots plus the answer slot; B of a second-order chain stays hidden.
REQUIRED_SLOTS = {
    0: {"A", "R", "B"}, 1: {"A", "R", "B"}, 2: {"A", "R", "B"},
    3: {"A", "R1", "R2", "C"}, 4: {"A", "R1", "R2", "C"},
    5: {"A", "R1", "R2", "C"}, 6: {"A", "R1", "R2", "C"},
}
ANSWER_SLOT = {0: "R", 1: "B", 2: "A", 3: "R2", 4: "R1", 5: "C", 6: "A"}
ORDER = {q: (1 if q <= 2 else 2) for q in range(7)}
# Scopes the last hop may take for each qtype; 0 and 1 are never KB-related.
HOP_SCOPES = {0: (Scope.IMAGE,), 1: (Scope.IMAGE,)}

_PLACEHOLDER = re.compile(r"<([A-Za-z][A-Za-z0-9]*)(?::([a-z0-9_]+))?>")


class TemplateError(ValueError):
    pass


def _p(slot: str) -> Leaf:
    return Leaf(f"<{slot.lower()}>")


def expected_skeleton(qtype: int, hop_scope: Scope) -> Layout:
    """The layout shape each qtype denotes; ``hop_scope`` is the scope of the last hop."""
    I, X = Scope.IMAGE, hop_scope
    q = QuerySymbol.make
    shapes = {
        0: lambda: Apply(q("ab", I), _p("A"), _p("B")),
        1: lambda: Apply(q("ar", I), _p("A"), _p("R")),
        2: lambda: Apply(q("rb", X), _p("R"), _p("B")),
        3: lambda: Apply(q("ab", X), Apply(q("ar", I), _p("A"), _p("R1")), _p("C")),
        4: lambda: Apply(q("ab", I), _p("A"), Apply(q("rb", X), _p("R2"), _p("C"))),
        5: lambda: Apply(q("ar", X), Apply(q("ar", I), _p("A"), _p("R1")), _p("R2")),
        6: lambda: Apply(q("rb", I), _p("R1"), Apply(q("rb", X), _p("R2"), _p("C"))),
    }
    return shapes[qtype]()


class Lexicon:
    """Per-relation (or per-entity) surface forms, e.g. ``holds`` -> ``holding``."""

    def __init__(self, forms: Optional[Mapping[str, Mapping[str, str]]] = None):
        self.forms = {normalize(name): {f: " ".join(s.lower().split()) for f, s in fs.items()}
                      for name, fs in (forms or {}).items()}
        self._reverse: dict[tuple[str, str], set] = {}
        self._cache: dict[tuple[str, str], list] = {}
        for name, fs in self.forms.items():
            for form, surface in fs.items():
                self._reverse.setdefault((form, surface), set()).add(name)

    def render(self, name: str, form: str = "base") -> str:
        fs = self.forms.get(name)
        if fs:
            if form in fs:
                return fs[form]
            if "base" in fs:
                return fs["base"]
        return name.replace("_", " ")

    def candidates(self, surface: str, form: str = "base") -> list[str]:
        """Names whose rendering in ``form`` is exactly ``surface``."""
        hit = self._cache.get((surface, form))
        if hit is not None:
            return hit
        names = set(self._reverse.get((form, surface), ()))
        names |= self._reverse.get(("base", surface), set())
        names.add(normalize(surface))
        out = self._cache[surface, form] = sorted(n for n in names if n and self.render(n, form) == surface)
        return out

    def to_dict(self) -> dict:
        return self.forms


@dataclass(frozen=True)
class Template:
    id: str
    qtype: int
    pattern: str
    answer_slot: str
    layout_skeleton: Layout
    grounding_mode: GroundingMode = GroundingMode.PLAIN
    order: int = 0
    segments: tuple = field(init=False, repr=False, compare=False)
    hop_scope: Scope = field(init=False, repr=False, compare=False)
    coarse: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.qtype not in ORDER:
            raise TemplateError(f"{self.id}: qtype must be 0..6")
        order = self.order or ORDER[self.qtype]
        if order != ORDER[self.qtype]:
            raise TemplateError(f"{self.id}: qtype {self.qtype} is order {ORDER[self.qtype]}, not {order}")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "grounding_mode", GroundingMode(self.grounding_mode))
        segments = _split_pattern(self.id, self.pattern)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "coarse", re.compile("".join(
            "(.+?)" if isinstance(s, tuple) else re.escape(s) for s in segments)))
        given = [s[0] for s in segments if isinstance(s, tuple)]
        if self.answer_slot in given:
            raise TemplateError(f"{self.id}: answer slot <{self.answer_slot}> appears in the pattern")
        if len(set(given)) != len(given):
            raise TemplateError(f"{self.id}: repeated placeholder")
        if set(given) | {self.answer_slot} != REQUIRED_SLOTS[self.qtype]:
            raise TemplateError(f"{self.id}: placeholders {sorted(given)} + answer {self.answer_slot} "
                                f"do not cover {sorted(REQUIRED_SLOTS[self.qtype])}")
        if self.answer_slot != ANSWER_SLOT[self.qtype]:
            raise TemplateError(f"{self.id}: qtype {self.qtype} asks for <{ANSWER_SLOT[self.qtype]}>")
        if count_applies(self.layout_skeleton) != order:
            raise TemplateError(f"{self.id}: skeleton must have {order} query node(s)")
        for scope in HOP_SCOPES.get(self.qtype, (Scope.IMAGE, Scope.KB)):
            if expected_skeleton(self.qtype, scope) == self.layout_skeleton:
                object.__setattr__(self, "hop_scope", scope)
                break
        else:
            raise TemplateError(f"{self.id}: skeleton {serialize(self.layout_skeleton)} "
                                f"does not denote qtype {self.qtype}")
        if self.grounding_mode is GroundingMode.GROUNDED and self.layout_skeleton.symbol.scope is not Scope.KB:
            raise TemplateError(f"{self.id}: grounding applies only to knowledge-base roots")

    @property
    def kb_related(self) -> bool:
        return self.hop_scope is Scope.KB

    @property
    def given_slots(self) -> tuple[str, ...]:
        return tuple(s[0] for s in self.segments if isinstance(s, tuple))

    def render(self, bindings: Mapping[str, Entry], lexicon: Lexicon) -> str:
        parts = []
        for seg in self.segments:
            if isinstance(seg, tuple):
                parts.append(lexicon.render(bindings[seg[0]].name, seg[1]))
            else:
                parts.append(seg)
        return "".join(parts)

    def layout(self, bindings: Mapping[str, Entry]) -> Layout:
        return substitute(self.layout_skeleton,
                          {f"<{slot.lower()}>": e.name for slot, e in bindings.items()})

    def invert(self, question: str, lexicon: Lexicon, vocabulary=None) -> Iterator[Layout]:
        """Layouts of every binding under which this template renders ``question``.

        ``vocabulary`` (e.g. a graph's entry table) restricts bindings to known
        entries; without one, relation slots accept only lexicon relations.
        """
        if not self.coarse.fullmatch(question):
            return
        for captures in _match(self.segments, question, 0, 0, {}):
            options = []
            for slot, form in ((s[0], s[1]) for s in self.segments if isinstance(s, tuple)):
                names = lexicon.candidates(captures[slot], form)
                if vocabulary is not None:
                    names = [n for n in names if Entry(n, SLOT_KIND[slot]) in vocabulary]
                elif SLOT_KIND[slot] is Kind.RELATIONSHIP:
                    # Without a vocabulary, relations are the lexicon's closed class.
                    names = [n for n in names if n in lexicon.forms]
                options.append([(slot, Entry(n, SLOT_KIND[slot])) for n in names])
            for combo in itertools.product(*options):
                yield self.layout(dict(combo))

    def to_dict(self) -> dict:
        return {"id": self.id, "qtype": self.qtype, "order": self.order, "pattern": self.pattern,
                "answer_slot": self.answer_slot, "layout_skeleton": serialize(self.layout_skeleton),
                "grounding_mode": self.grounding_mode.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Template":
        try:
            return cls(id=str(d["id"]), qtype=int(d["qtype"]), pattern=d["pattern"],
                       answer_slot=d["answer_slot"].strip("<>").upper(),
                       layout_skeleton=parse_layout(d["layout_skeleton"]),
                       grounding_mode=d.get("grounding_mode", "plain"), order=int(d.get("order", 0)))
        except KeyError as exc:
            raise TemplateError(f"template {d.get('id', '?')}: missing field {exc}") from None


def _split_pattern(tid: str, pattern: str) -> tuple:
    text = " ".join(pattern.split())
    segments = []
    pos = 0
    for m in _PLACEHOLDER.finditer(text):
        if m.start() > pos:
            segments.append(text[pos:m.start()].lower())
        elif segments and isinstance(segments[-1], tuple):
            raise TemplateError(f"{tid}: placeholders must be separated by text")
        slot = m.group(1).upper()
        if slot not in SLOTS:
            raise TemplateError(f"{tid}: unknown placeholder <{m.group(1)}>")
        segments.append((slot, m.group(2) or "base"))
        pos = m.end()
    if pos < len(text):
        segments.append(text[pos:].lower())
    if "<" in "".join(s for s in segments if isinstance(s, str)):
        raise TemplateError(f"{tid}: malformed placeholder in {pattern!r}")
    return tuple(segments)


def _match(segments: Sequence, text: str, i: int, pos: int, acc: dict) -> Iterator[dict]:
    if i == len(segments):
        if pos == len(text):
            yield dict(acc)
        return
    seg = segments[i]
    if not isinstance(seg, tuple):
        if text.startswith(seg, pos):
            yield from _match(segments, text, i + 1, pos + len(seg), acc)
        return
    slot = seg[0]
    if i + 1 == len(segments):
        cap = text[pos:]
        if cap and cap == cap.strip():
            acc[slot] = cap
            yield dict(acc)
        return
    lit = segments[i + 1]
    k = text.find(lit, pos + 1)
    while k != -1:
        cap = text[pos:k]
        if cap == cap.strip():
            acc[slot] = cap
            yield from _match(segments, text, i + 1, k, acc)
        k = text.find(lit, k + 1)
    acc.pop(slot, None)


class TemplateSet:
    def __init__(self, templates: Sequence[Template], lexicon: Optional[Lexicon] = None):
        self.templates = tuple(sorted(templates, key=lambda t: t.id))
        ids = [t.id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise TemplateError("duplicate template ids")
        self.lexicon = lexicon or Lexicon()

    def __iter__(self) -> Iterator[Template]:
        return iter(self.templates)

    def __len__(self):
        return len(self.templates)

    def select(self, qtype: Optional[int] = None, hop_scope: Optional[Scope] = None) -> list[Template]:
        return [t for t in self.templates
                if (qtype is None or t.qtype == qtype) and (hop_scope is None or t.hop_scope is hop_scope)]

    def to_dict(self) -> dict:
        return {"lexicon": self.lexicon.to_dict(), "templates": [t.to_dict() for t in self.templates]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TemplateSet":
        return cls([Template.from_dict(t) for t in d["templates"]], Lexicon(d.get("lexicon")))


def load_templates(path) -> TemplateSet:
    with open(path, encoding="utf-8") as fh:
        return TemplateSet.from_dict(json.load(fh))


def default_templates() -> TemplateSet:
    text = resources.files("kgvqa").joinpath("data/templates.json").read_text(encoding="utf-8")
    return TemplateSet.from_dict(json.loads(text))
