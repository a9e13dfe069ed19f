"""Question-answer generation: chain sampling, template instantiation, validity
filtering through the executor, bias constraints and split assignment."""

from __future__ import annotations

import enum
import json
import logging
import math
import random
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .executor import DEFAULT_MAX_PAIRS, ExecError, GroundingMode, justify, run
from .kgraph import Entry, ImageKnowledgeGraph, Scope, Triplet
from .query import Layout, QueryError, parse_layout, parse_question, serialize
from .templates import ORDER, SLOT_KIND, Lexicon, Template, TemplateSet

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.6, 0.2, 0.2)
DEFAULT_ANSWER_CAP = 100
UNIQUE_KB_QTYPES = frozenset({2, 3, 5})

Chain = tuple  # tuple[Triplet, ...], one or two hops


class InstantiationError(ValueError):
    pass


class RejectReason(str, enum.Enum):
    NO_ANSWER = "NoAnswer"
    MULTIPLE_ANSWERS = "MultipleAnswers"
    ANSWER_MISMATCH = "AnswerMismatch"
    EXEC_ERROR = "ExecError"
    AMBIGUOUS_TEXT = "AmbiguousText"


@dataclass(frozen=True)
class Candidate:
    image_id: str
    chain: Chain
    template: Template
    question: str
    answer: str
    layout: Layout
    grounding_mode: GroundingMode = GroundingMode.PLAIN


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Optional[RejectReason] = None
    supporting_facts: tuple = ()
    detail: str = ""

    def __bool__(self):
        return self.accepted


@dataclass(frozen=True)
class QARecord:
    record_id: str
    image_id: str
    question: str
    answer: str
    qtype: int
    order: int
    kb_related: bool
    layout: Layout
    supporting_facts: tuple
    split: Optional[str] = None
    grounding_mode: GroundingMode = GroundingMode.PLAIN
    template_id: str = ""

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_id": self.image_id,
            "question": self.question,
            "answer": self.answer,
            "qtype": self.qtype,
            "order": self.order,
            "kb_related": self.kb_related,
            "layout": serialize(self.layout),
            "supporting_facts": [t.to_json() for t in self.supporting_facts],
            "split": self.split,
            "grounding_mode": self.grounding_mode.value,
            "template_id": self.template_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QARecord":
        return cls(
            record_id=str(d["record_id"]), image_id=str(d["image_id"]), question=d["question"],
            answer=d["answer"], qtype=int(d["qtype"]), order=int(d["order"]),
            kb_related=bool(d["kb_related"]), layout=parse_layout(d["layout"]),
            supporting_facts=tuple(Triplet.from_json(row) for row in d["supporting_facts"]),
            split=d.get("split"), grounding_mode=GroundingMode(d.get("grounding_mode", "plain")),
            template_id=d.get("template_id", ""),
        )

    def kb_facts(self) -> tuple:
        return tuple(t for t in self.supporting_facts if t.scope is Scope.KB)


# -- chains -----------------------------------------------------------------------

def enumerate_chains(graph: ImageKnowledgeGraph, order: int) -> list[Chain]:
    """All valid chains in canonical order.

    First order: every image triplet, plus KB triplets whose subject is an
    entity seen in the image. Second order: an image hop ``(A, R1, B)``
    followed by an image or KB hop ``(B, R2, C)``.
    """
    image = graph.image_index
    kb = graph.kb.index
    if order == 1:
        chains = [(t,) for t in image.triplets]
        for ent in sorted(graph.image_entities):
            chains.extend((t,) for t in kb.by_subject.get(ent, ()))
        return chains
    if order != 2:
        raise ValueError("order must be 1 or 2")
    chains = []
    for h1 in image.triplets:
        for h2 in image.by_subject.get(h1.object, ()):
            if h2 != h1:
                chains.append((h1, h2))
        for h2 in kb.by_subject.get(h1.object, ()):
            chains.append((h1, h2))
    return chains


def sample_chains(graph: ImageKnowledgeGraph, order: int, rng_seed: int,
                  limit: Optional[int] = None) -> list[Chain]:
    """Seeded random ordering of the valid chains, optionally truncated to ``limit``."""
    chains = enumerate_chains(graph, order)
    random.Random(rng_seed).shuffle(chains)
    return chains if limit is None else chains[:limit]


def chain_scope(chain: Chain) -> Scope:
    return chain[-1].scope


def bind(chain: Chain) -> dict[str, Entry]:
    if len(chain) == 1:
        t, = chain
        return {"A": t.subject, "R": t.relation, "B": t.object}
    h1, h2 = chain
    if h1.object != h2.subject:
        raise InstantiationError(f"hops {h1} and {h2} are not linked")
    return {"A": h1.subject, "R1": h1.relation, "B": h1.object, "R2": h2.relation, "C": h2.object}


def instantiate(chain: Chain, template: Template, lexicon: Optional[Lexicon] = None) -> tuple[str, str, Layout]:
    """(question text, answer name, layout) for ``chain`` under ``template``."""
    if len(chain) != template.order:
        raise InstantiationError(f"template {template.id} needs {template.order} hop(s), chain has {len(chain)}")
    bindings = bind(chain)
    for slot, entry in bindings.items():
        if entry.kind is not SLOT_KIND[slot]:
            raise InstantiationError(f"<{slot}> needs an {SLOT_KIND[slot].value}, got {entry.kind.value} {entry.name!r}")
    lexicon = lexicon or Lexicon()
    given = {s: bindings[s] for s in template.given_slots}
    return template.render(given, lexicon), bindings[template.answer_slot].name, template.layout(given)


# -- validity ---------------------------------------------------------------------

def validate(candidate: Candidate, graph: ImageKnowledgeGraph, templates: Optional[TemplateSet] = None,
             max_pairs: int = DEFAULT_MAX_PAIRS) -> Verdict:
    """Accept iff the layout has exactly the chain's answer.

    With ``templates`` the question text must also invert uniquely to the
    candidate's own layout, so the parser can recover it later.
    """
    try:
        result = run(candidate.layout, graph, candidate.grounding_mode, max_pairs)
    except ExecError as exc:
        return Verdict(False, RejectReason.EXEC_ERROR, detail=str(exc))
    if not result.answers:
        return Verdict(False, RejectReason.NO_ANSWER)
    if len(result.answers) > 1:
        return Verdict(False, RejectReason.MULTIPLE_ANSWERS, detail=str(len(result.answers)))
    if result.answers[0].name != candidate.answer:
        return Verdict(False, RejectReason.ANSWER_MISMATCH, detail=result.answers[0].name)
    if templates is not None:
        problem = text_problem(candidate, graph, templates)
        if problem is not None:
            return Verdict(False, RejectReason.AMBIGUOUS_TEXT, detail=problem)
    support = sorted({t for step in justify(result) for t in step.supporting})
    return Verdict(True, supporting_facts=tuple(support))


def text_problem(candidate: Candidate, graph: ImageKnowledgeGraph, templates: TemplateSet) -> Optional[str]:
    """Why the question text fails to invert to the candidate's layout, or None."""
    try:
        parsed = parse_question(candidate.question, templates, graph.entry_table)
    except QueryError as exc:
        return str(exc)
    if parsed != candidate.layout:
        return f"text inverts to {serialize(parsed)}"
    return None


# -- constraints --------------------------------------------------------------------

@dataclass
class ConstraintLedger:
    answer_cap: int = DEFAULT_ANSWER_CAP
    answer_counts: Counter = field(default_factory=Counter)
    used_kb_triplets: set = field(default_factory=set)
    drops: Counter = field(default_factory=Counter)

    def check(self, record: QARecord) -> Optional[str]:
        if record.kb_related and self.answer_counts[record.qtype, record.answer] >= self.answer_cap:
            return "answer_cap"
        if record.qtype in UNIQUE_KB_QTYPES:
            if any(t in self.used_kb_triplets for t in record.kb_facts()):
                return "kb_triplet_reuse"
        return None

    def admit(self, record: QARecord) -> bool:
        reason = self.check(record)
        if reason is not None:
            self.drops[reason] += 1
            return False
        if record.kb_related:
            self.answer_counts[record.qtype, record.answer] += 1
        if record.qtype in UNIQUE_KB_QTYPES:
            self.used_kb_triplets.update(record.kb_facts())
        return True


def apply_constraints(records: Iterable[QARecord], ledger: ConstraintLedger) -> Iterator[QARecord]:
    for record in records:
        if ledger.admit(record):
            yield record


def audit_constraints(records: Iterable[QARecord], answer_cap: int = DEFAULT_ANSWER_CAP) -> list[str]:
    """Post-hoc scan for cap or uniqueness violations; returns problem descriptions."""
    counts = Counter()
    seen = {}
    problems = []
    for r in records:
        if r.kb_related:
            counts[r.qtype, r.answer] += 1
        if r.qtype in UNIQUE_KB_QTYPES:
            for t in r.kb_facts():
                if t in seen:
                    problems.append(f"KB fact {t} reused by {seen[t]} and {r.record_id}")
                seen.setdefault(t, r.record_id)
    for (qtype, ans), n in sorted(counts.items()):
        if n > answer_cap:
            problems.append(f"qtype {qtype} answer {ans!r} appears {n} times in KB-related questions")
    return problems


# -- splits -------------------------------------------------------------------------

def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items."""
    raw = [n * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    rest = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in rest[: n - sum(counts)]:
        counts[i] += 1
    return counts


def assign_splits(records: Sequence[QARecord], ratios: Sequence[float] = DEFAULT_RATIOS,
                  rng_seed: int = 0) -> list[QARecord]:
    """Label records by image: shuffled image ids are cut at the ratios."""
    if not records:
        raise ValueError("cannot split an empty record set")
    if len(ratios) != len(SPLITS) or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    images = sorted({r.image_id for r in records})
    random.Random(rng_seed).shuffle(images)
    label = {}
    start = 0
    for name, n in zip(SPLITS, split_counts(len(images), ratios)):
        for image_id in images[start:start + n]:
            label[image_id] = name
        start += n
    return [replace(r, split=label[r.image_id]) for r in records]


# -- statistics -----------------------------------------------------------------------

@dataclass
class StatsReport:
    total: int
    grid: dict            # (order, qtype) -> {split: count}
    kb_grid: dict         # (kb_related, order, qtype) -> count
    kb_related: int
    kb_not_related: int
    unique_questions: int
    answer_vocab: dict    # "kb_related" / "kb_not_related" -> size
    length_histogram: dict
    top_answers: dict

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "grid": [{"order": o, "qtype": q, **row} for (o, q), row in sorted(self.grid.items())],
            "kb_grid": [{"kb_related": k, "order": o, "qtype": q, "count": n}
                        for (k, o, q), n in sorted(self.kb_grid.items())],
            "kb_related": self.kb_related,
            "kb_not_related": self.kb_not_related,
            "unique_questions": self.unique_questions,
            "answer_vocab": self.answer_vocab,
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "top_answers": self.top_answers,
        }

    def render(self) -> str:
        lines = [f"{'order':>5} {'qtype':>5} {'Train':>8} {'Val':>8} {'Test':>8} {'Total':>8}"]
        for (o, q), row in sorted(self.grid.items()):
            lines.append(f"{o:>5} {q:>5} {row['train']:>8,} {row['val']:>8,} {row['test']:>8,} {row['total']:>8,}")
        lines.append(f"records {self.total:,}  unique questions {self.unique_questions:,}  "
                     f"KB-related {self.kb_related:,}  KB-not-related {self.kb_not_related:,}")
        lines.append(f"answer vocabulary: KB-related {self.answer_vocab['kb_related']:,}, "
                     f"KB-not-related {self.answer_vocab['kb_not_related']:,}")
        if self.length_histogram:
            lo, hi = min(self.length_histogram), max(self.length_histogram)
            mean = sum(k * v for k, v in self.length_histogram.items()) / self.total
            lines.append(f"question length: {lo}-{hi} words, mean {mean:.1f}")
        return "\n".join(lines)


def dataset_stats(records: Iterable[QARecord], top_k: int = 15) -> StatsReport:
    records = list(records)
    grid = {(ORDER[q], q): {"train": 0, "val": 0, "test": 0, "unassigned": 0, "total": 0} for q in range(7)}
    kb_grid = Counter()
    lengths = Counter()
    answers = {True: Counter(), False: Counter()}
    for r in records:
        row = grid[r.order, r.qtype]
        row[r.split if r.split in SPLITS else "unassigned"] += 1
        row["total"] += 1
        kb_grid[r.kb_related, r.order, r.qtype] += 1
        lengths[len(r.question.split())] += 1
        answers[r.kb_related][r.answer] += 1
    n_kb = sum(answers[True].values())
    return StatsReport(
        total=len(records),
        grid=grid,
        kb_grid=dict(kb_grid),
        kb_related=n_kb,
        kb_not_related=len(records) - n_kb,
        unique_questions=len({r.question for r in records}),
        answer_vocab={"kb_related": len(answers[True]), "kb_not_related": len(answers[False])},
        length_histogram=dict(lengths),
        top_answers={
            "kb_related": sorted(answers[True].items(), key=lambda kv: (-kv[1], kv[0]))[:top_k],
            "kb_not_related": sorted(answers[False].items(), key=lambda kv: (-kv[1], kv[0]))[:top_k],
        },
    )


# -- pipeline ---------------------------------------------------------------------------

@dataclass
class GenerationConfig:
    seed: int = 0
    ratios: tuple = DEFAULT_RATIOS
    answer_cap: int = DEFAULT_ANSWER_CAP
    max_pairs: int = DEFAULT_MAX_PAIRS
    grounded: bool = True
    max_chains: Optional[int] = None  # per image and order
    check_text: bool = True


@dataclass
class GenerationResult:
    records: list
    ledger: ConstraintLedger
    rejections: Counter
    candidates: int


def _seed(*parts) -> int:
    return zlib.crc32("/".join(map(str, parts)).encode())


def image_candidates(graph: ImageKnowledgeGraph, templates: TemplateSet,
                     config: GenerationConfig) -> Iterator[Candidate]:
    """Candidates for one image: chains in sampled order, one template variant per qtype."""
    pick = random.Random(_seed(config.seed, graph.image_id, "templates"))
    groups = {}
    for t in templates:
        groups.setdefault((t.order, t.hop_scope), {}).setdefault(t.qtype, []).append(t)
    chains = [c for order in (1, 2)
              for c in sample_chains(graph, order, _seed(config.seed, graph.image_id, order), config.max_chains)]
    # Interleave orders so first-order questions do not claim every KB fact first.
    random.Random(_seed(config.seed, graph.image_id, "mix")).shuffle(chains)
    for chain in chains:
        by_qtype = groups.get((len(chain), chain_scope(chain)), {})
        qtypes = sorted(by_qtype)
        # Qtypes 3 and 5 compete for a chain's KB fact; neither should always win.
        pick.shuffle(qtypes)
        for qtype in qtypes:
            variants = by_qtype[qtype]
            template = variants[pick.randrange(len(variants))]
            question, answer, layout = instantiate(chain, template, templates.lexicon)
            mode = template.grounding_mode if config.grounded else GroundingMode.PLAIN
            yield Candidate(graph.image_id, chain, template, question, answer, layout, mode)


def generate(graphs: Iterable[ImageKnowledgeGraph], templates: TemplateSet,
             config: Optional[GenerationConfig] = None) -> GenerationResult:
    config = config or GenerationConfig()
    ledger = ConstraintLedger(answer_cap=config.answer_cap)
    rejections = Counter()
    n_candidates = 0

    def accepted():
        nonlocal n_candidates
        for graph in sorted(graphs, key=lambda g: g.image_id):
            for cand in image_candidates(graph, templates, config):
                n_candidates += 1
                verdict = validate(cand, graph, None, config.max_pairs)
                if not verdict:
                    rejections[verdict.reason.value] += 1
                    continue
                record = QARecord(
                    record_id="", image_id=cand.image_id, question=cand.question, answer=cand.answer,
                    qtype=cand.template.qtype, order=cand.template.order,
                    kb_related=any(t.scope is Scope.KB for t in verdict.supporting_facts),
                    layout=cand.layout, supporting_facts=verdict.supporting_facts,
                    grounding_mode=cand.grounding_mode, template_id=cand.template.id,
                )
                # The ledger check is pure, so running it before the costlier text
                # check changes only which reason a doubly-failing candidate is counted under.
                if config.check_text and ledger.check(record) is None:
                    problem = text_problem(cand, graph, templates)
                    if problem is not None:
                        rejections[RejectReason.AMBIGUOUS_TEXT.value] += 1
                        continue
                yield record

    admitted = [replace(r, record_id=f"q{i:06d}")
                for i, r in enumerate(apply_constraints(accepted(), ledger))]
    if admitted:
        admitted = assign_splits(admitted, config.ratios, config.seed)
    logger.info("generated %d records from %d candidates", len(admitted), n_candidates)
    return GenerationResult(admitted, ledger, rejections, n_candidates)


def write_dataset(records: Iterable[QARecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_dataset(path) -> list[QARecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(QARecord.from_dict(json.loads(line)))
                except (KeyError, ValueError, QueryError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad record: {exc}") from None
    return out
