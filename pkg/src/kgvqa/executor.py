"""Symbolic execution of query layouts over an image-specific knowledge graph.

Intermediate results are full entry sets; no step takes an argmax. Every
step records the triplets that produced its outputs, so answers come with a
provenance trace.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional, Union

from .kgraph import Entry, ImageKnowledgeGraph, Kind, Scope, Triplet
from .query import Apply, Layout, Leaf, QueryError, QuerySymbol, leaf_kinds

DEFAULT_MAX_PAIRS = 10_000


class ExecError(Exception):
    pass


class UnknownEntryError(ExecError):
    pass


class LayoutTypeError(ExecError):
    pass


class CrossProductLimitError(ExecError):
    pass


class GroundingMode(str, enum.Enum):
    PLAIN = "plain"
    GROUNDED = "grounded"


def entry_set(entries) -> tuple[Entry, ...]:
    """Deduplicated entries in name order."""
    return tuple(sorted(set(entries)))


@dataclass(frozen=True)
class TraceStep:
    path: tuple[int, ...]
    symbol: QuerySymbol
    left: tuple[Entry, ...]
    right: tuple[Entry, ...]
    outputs: tuple[Entry, ...]
    supporting: tuple[Triplet, ...]

    def to_dict(self) -> dict:
        return {
            "path": list(self.path),
            "symbol": self.symbol.value,
            "left": [e.name for e in self.left],
            "right": [e.name for e in self.right],
            "outputs": [e.name for e in self.outputs],
            "supporting": [t.to_json() for t in self.supporting],
        }


@dataclass(frozen=True)
class ExecResult:
    answers: tuple[Entry, ...]
    trace: tuple[TraceStep, ...]

    @property
    def root(self) -> Optional[TraceStep]:
        return self.trace[-1] if self.trace else None

    def supporting_facts(self) -> frozenset:
        return frozenset(t for step in self.trace for t in step.supporting)

    def to_dict(self) -> dict:
        return {"answers": [e.name for e in self.answers],
                "trace": [s.to_dict() for s in self.trace]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class AnswerReport:
    """Outcome when a layout does not have exactly one answer."""

    count: int

    @property
    def status(self) -> str:
        return "none" if self.count == 0 else "multiple"

    def __str__(self):
        return "None" if self.count == 0 else f"Multiple({self.count})"


def _check_types(layout: Layout) -> None:
    try:
        leaf_kinds(layout)
    except QueryError as exc:
        raise LayoutTypeError(str(exc)) from None


def _run(node: Layout, path, kind: Optional[Kind], graph: ImageKnowledgeGraph,
         steps: list, max_pairs: int) -> tuple[Entry, ...]:
    if isinstance(node, Leaf):
        if kind is None:
            raise LayoutTypeError("a bare leaf is not a query")
        entry = Entry(node.name, kind)
        if entry not in graph.entry_table:
            raise UnknownEntryError(f"unknown {kind.value} {node.name!r} in image {graph.image_id}")
        return (entry,)
    sym = node.symbol
    lk, rk = sym.input_kinds
    left = _run(node.left, path + (0,), lk, graph, steps, max_pairs)
    right = _run(node.right, path + (1,), rk, graph, steps, max_pairs)
    if len(left) * len(right) > max_pairs:
        raise CrossProductLimitError(
            f"{sym} at {list(path)}: {len(left)}x{len(right)} pairs exceeds cap {max_pairs}")
    index = graph.index(sym.scope)
    li, ri = sym.input_slots
    unknown = sym.unknown_slot
    outputs, supporting = set(), []
    for l in left:
        for r in right:
            slots = [None, None, None]
            slots[li], slots[ri] = l, r
            for t in index.match(*slots):
                supporting.append(t)
                outputs.add((t.subject, t.relation, t.object)[unknown])
    out = entry_set(outputs)
    steps.append(TraceStep(path, sym, left, right, out, tuple(sorted(set(supporting)))))
    return out


def execute(layout: Layout, graph: ImageKnowledgeGraph, max_pairs: int = DEFAULT_MAX_PAIRS) -> ExecResult:
    """Evaluate ``layout`` bottom-up; steps appear in post-order."""
    _check_types(layout)
    steps: list[TraceStep] = []
    answers = _run(layout, (), None, graph, steps, max_pairs)
    return ExecResult(answers, tuple(steps))


def execute_grounded(layout: Layout, graph: ImageKnowledgeGraph,
                     max_pairs: int = DEFAULT_MAX_PAIRS) -> ExecResult:
    """As :func:`execute`, but a KB-scoped root is restricted to entities seen in the image."""
    result = execute(layout, graph, max_pairs)
    if not isinstance(layout, Apply) or layout.symbol.scope is not Scope.KB:
        return result
    root = result.root
    keep = tuple(e for e in root.outputs if e in graph.image_entities)
    unknown = root.symbol.unknown_slot
    support = tuple(t for t in root.supporting
                    if (t.subject, t.relation, t.object)[unknown] in keep)
    grounded = TraceStep(root.path, root.symbol, root.left, root.right, keep, support)
    return ExecResult(keep, result.trace[:-1] + (grounded,))


def run(layout: Layout, graph: ImageKnowledgeGraph, mode: GroundingMode = GroundingMode.PLAIN,
        max_pairs: int = DEFAULT_MAX_PAIRS) -> ExecResult:
    if GroundingMode(mode) is GroundingMode.GROUNDED:
        return execute_grounded(layout, graph, max_pairs)
    return execute(layout, graph, max_pairs)


def answer(layout: Layout, graph: ImageKnowledgeGraph, mode: GroundingMode = GroundingMode.PLAIN,
           max_pairs: int = DEFAULT_MAX_PAIRS) -> Union[Entry, AnswerReport]:
    result = run(layout, graph, mode, max_pairs)
    if len(result.answers) == 1:
        return result.answers[0]
    return AnswerReport(len(result.answers))


def justify(result: ExecResult) -> tuple[TraceStep, ...]:
    """Prune a trace to the entries and triplets on some chain reaching a root answer.

    Walks top-down from the root: a step keeps the supporting triplets whose
    retrieved slot is a kept output, and a child step's kept outputs are the
    values its parent actually consumed.
    """
    if not result.trace:
        return ()
    by_path = {s.path: s for s in result.trace}
    kept_out = {result.root.path: set(result.answers)}
    pruned = {}
    for step in sorted(result.trace, key=lambda s: len(s.path)):
        keep = kept_out.get(step.path, set())
        li, ri = step.symbol.input_slots
        unknown = step.symbol.unknown_slot
        support = tuple(t for t in step.supporting
                        if (t.subject, t.relation, t.object)[unknown] in keep)
        lefts = {(t.subject, t.relation, t.object)[li] for t in support}
        rights = {(t.subject, t.relation, t.object)[ri] for t in support}
        for child, used in ((step.path + (0,), lefts), (step.path + (1,), rights)):
            if child in by_path:
                kept_out[child] = used
        pruned[step.path] = TraceStep(step.path, step.symbol,
                                      tuple(e for e in step.left if e in lefts),
                                      tuple(e for e in step.right if e in rights),
                                      tuple(e for e in step.outputs if e in keep),
                                      support)
    return tuple(pruned[s.path] for s in result.trace)
