"""Answer accuracy along the (KB class, order, qtype) grid, the supporting-triplet
explanation score, and the per-qtype modal-answer baseline."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .executor import DEFAULT_MAX_PAIRS, ExecError, TraceStep, justify, run
from .kgraph import ImageKnowledgeGraph, normalize
from .qgen import QARecord
from .query import QuerySymbol

UNKNOWN_ANSWER = "unknown"

# Column layout of the accuracy table: (kb_related, order, qtype).
TABLE_CELLS = (
    [(False, 1, q) for q in (0, 1, 2)] + [(False, 2, q) for q in (3, 4, 5, 6)]
    + [(True, 1, 2)] + [(True, 2, q) for q in (3, 4, 5, 6)]
)


class EvaluationError(ValueError):
    def __init__(self, message: str, ids: Sequence[str] = ()):
        self.ids = list(ids)
        super().__init__(message)


NameTriple = tuple  # (subject, relation, object) names


@dataclass(frozen=True)
class Prediction:
    record_id: str
    answer: str
    predicted_triplets: Optional[frozenset] = None

    def to_dict(self) -> dict:
        d = {"record_id": self.record_id, "answer": self.answer}
        if self.predicted_triplets is not None:
            d["predicted_triplets"] = [list(t) for t in sorted(self.predicted_triplets)]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Prediction":
        trips = d.get("predicted_triplets")
        if trips is not None:
            trips = frozenset(_name_triple(t) for t in trips)
        return cls(str(d["record_id"]), str(d["answer"]), trips)


def _name_triple(t: Sequence[str]) -> NameTriple:
    if len(t) != 3:
        raise ValueError(f"predicted triplet must have 3 names: {t!r}")
    return tuple(normalize(x) for x in t)


def read_predictions(path) -> list[Prediction]:
    with open(path, encoding="utf-8") as fh:
        return [Prediction.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_predictions(predictions: Iterable[Prediction], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_dict()) + "\n")


@dataclass
class EvalReport:
    accuracy: float
    total: int
    correct: int
    cells: dict = field(default_factory=dict)   # (kb, order, qtype) -> {"count", "correct", "accuracy"}
    explanation: Optional[dict] = None          # overall / kb_related / kb_not_related
    missing: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "correct": self.correct,
            "missing": self.missing,
            "cells": [{"kb_related": k, "order": o, "qtype": q, **v}
                      for (k, o, q), v in sorted(self.cells.items())],
            "explanation": self.explanation,
        }

    def render(self, method: str = "predictions") -> str:
        def pct(x):
            return "-" if x is None else f"{100 * x:.2f}"

        head1 = f"{'':<18}|{'KB-not-related':^55}|{'KB-related':^39}|"
        head2 = f"{'':<18}|{'first-order':^23}|{'second-order':^31}|{'1st':^7}|{'second-order':^31}|"
        cols = "".join(f"{q:>8}" for _, _, q in TABLE_CELLS)
        lines = [head1, head2, f"{'Method':<18}{cols}{'Overall':>9}"]
        vals = "".join(f"{pct(self.cells.get(c, {}).get('accuracy')):>8}" for c in TABLE_CELLS)
        lines.append(f"{method[:18]:<18}{vals}{pct(self.accuracy if self.total else None):>9}")
        lines.append(f"{'count':<18}" + "".join(f"{self.cells.get(c, {}).get('count', 0):>8}"
                                                 for c in TABLE_CELLS) + f"{self.total:>9}")
        if self.explanation is not None:
            e = self.explanation
            lines.append("")
            lines.append(f"{'explanation':<18}{'KB-not-related':>16}{'KB-related':>12}{'Overall':>9}")
            lines.append(f"{method[:18]:<18}{pct(e['kb_not_related']):>16}{pct(e['kb_related']):>12}"
                         f"{pct(e['overall']):>9}")
        return "\n".join(lines)


def _index_predictions(predictions: Iterable[Prediction], gold: Sequence[QARecord]) -> dict:
    by_id = {}
    dupes = []
    for p in predictions:
        if p.record_id in by_id:
            dupes.append(p.record_id)
        by_id[p.record_id] = p
    if dupes:
        raise EvaluationError(f"duplicate prediction ids: {sorted(set(dupes))[:10]}", sorted(set(dupes)))
    gold_ids = {r.record_id for r in gold}
    unmatched = sorted(set(by_id) - gold_ids)
    if unmatched:
        raise EvaluationError(f"{len(unmatched)} predictions match no gold record: {unmatched[:10]}", unmatched)
    return by_id


def score_answers(predictions: Iterable[Prediction], gold: Sequence[QARecord]) -> EvalReport:
    by_id = _index_predictions(predictions, gold)
    counts = defaultdict(lambda: [0, 0])
    missing = 0
    for r in gold:
        cell = counts[r.kb_related, r.order, r.qtype]
        cell[0] += 1
        p = by_id.get(r.record_id)
        if p is None:
            missing += 1
        elif normalize(p.answer) == normalize(r.answer):
            cell[1] += 1
    cells = {k: {"count": n, "correct": c, "accuracy": c / n} for k, (n, c) in counts.items()}
    total = sum(v["count"] for v in cells.values())
    correct = sum(v["correct"] for v in cells.values())
    return EvalReport(accuracy=correct / total if total else 0.0, total=total, correct=correct,
                      cells=cells, missing=missing)


def triplets_from_trace(trace: Iterable) -> set:
    """Name triples implied by each step's inputs and outputs.

    Each entry of a multi-entry input or output forms its own triple, so
    left ``[apple, orange]``, right ``[on]``, outputs ``[plate]`` under
    ``Q_ar_I`` give ``(apple, on, plate)`` and ``(orange, on, plate)``.
    Steps may be :class:`TraceStep` objects or their ``to_dict`` form.
    """
    out = set()
    for step in trace:
        if isinstance(step, TraceStep):
            sym = step.symbol
            left = [e.name for e in step.left]
            right = [e.name for e in step.right]
            outs = [e.name for e in step.outputs]
        else:
            sym = QuerySymbol(step["symbol"])
            left, right, outs = step["left"], step["right"], step["outputs"]
        li, ri = sym.input_slots
        for l in left:
            for r in right:
                for o in outs:
                    slots = [None, None, None]
                    slots[li], slots[ri], slots[sym.unknown_slot] = l, r, o
                    out.add(tuple(normalize(x) for x in slots))
    return out


def explanation_score(predicted: Optional[Iterable[NameTriple]], gold_facts: Iterable) -> float:
    predicted = set(predicted or ())
    if not predicted:
        return 0.0
    gold = {t.names if hasattr(t, "names") else tuple(t) for t in gold_facts}
    return len(predicted & gold) / len(predicted)


def score_explanations(predictions: Iterable[Prediction], gold: Sequence[QARecord]) -> dict:
    by_id = _index_predictions(predictions, gold)
    scores = {True: [], False: []}
    for r in gold:
        p = by_id.get(r.record_id)
        trips = p.predicted_triplets if p is not None else None
        scores[r.kb_related].append(explanation_score(trips, r.supporting_facts))

    def mean(xs):
        return sum(xs) / len(xs) if xs else None

    every = scores[True] + scores[False]
    return {"overall": mean(every) if every else 0.0,
            "kb_related": mean(scores[True]), "kb_not_related": mean(scores[False])}


def evaluate(predictions: Iterable[Prediction], gold: Sequence[QARecord]) -> EvalReport:
    predictions = list(predictions)
    report = score_answers(predictions, gold)
    if any(p.predicted_triplets is not None for p in predictions):
        report.explanation = score_explanations(predictions, gold)
    return report


def qtype_mode_baseline(train: Iterable[QARecord], test: Iterable[QARecord]) -> list[Prediction]:
    """Predict each qtype's most frequent training answer (ties: lexicographically first)."""
    by_qtype = defaultdict(Counter)
    for r in train:
        by_qtype[r.qtype][normalize(r.answer)] += 1
    modal = {q: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for q, c in by_qtype.items()}
    return [Prediction(r.record_id, modal.get(r.qtype, UNKNOWN_ANSWER)) for r in test]


def oracle_predictions(records: Iterable[QARecord], graphs: Mapping[str, ImageKnowledgeGraph],
                       max_pairs: int = DEFAULT_MAX_PAIRS) -> list[Prediction]:
    """Answer every record by executing its layout; triplets come from the justified trace."""
    preds = []
    for r in records:
        try:
            result = run(r.layout, graphs[r.image_id], r.grounding_mode, max_pairs)
        except (ExecError, KeyError):
            preds.append(Prediction(r.record_id, UNKNOWN_ANSWER, frozenset()))
            continue
        ans = result.answers[0].name if len(result.answers) == 1 else UNKNOWN_ANSWER
        preds.append(Prediction(r.record_id, ans, frozenset(triplets_from_trace(justify(result)))))
    return preds
