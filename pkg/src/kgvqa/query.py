"""Query layouts: AST, lexer, shift-reduce parser, serializer and the
template-inversion question parser.

Canonical layout text is an s-expression with the query symbol first::

    (Q_ar_K (Q_rb_I on desk) usedfor)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, NamedTuple, Optional, Union

from .kgraph import Kind, Scope, normalize

if TYPE_CHECKING:
    from .templates import TemplateSet


class QueryError(Exception):
    pass


class LexError(QueryError):
    pass


class ParseError(QueryError):
    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        super().__init__(message if index is None else f"token {index}: {message}")


class UnparseableQuestion(QueryError):
    pass


class AmbiguousQuestion(QueryError):
    def __init__(self, message: str, layouts=()):
        self.layouts = tuple(layouts)
        super().__init__(message)


class QuerySymbol(str, enum.Enum):
    Q_AB_I = "Q_ab_I"
    Q_AR_I = "Q_ar_I"
    Q_RB_I = "Q_rb_I"
    Q_AB_K = "Q_ab_K"
    Q_AR_K = "Q_ar_K"
    Q_RB_K = "Q_rb_K"

    @property
    def scope(self) -> Scope:
        return Scope.IMAGE if self.value.endswith("_I") else Scope.KB

    @property
    def query(self) -> str:
        """``ab``, ``ar`` or ``rb``: the two bound slots of the triplet."""
        return self.value[2:4]

    @property
    def unknown_slot(self) -> int:
        """Index into (subject, relation, object) of the slot being retrieved."""
        return {"ab": 1, "ar": 2, "rb": 0}[self.query]

    @property
    def input_slots(self) -> tuple[int, int]:
        """Triplet slots bound by the left and right children."""
        return {"ab": (0, 2), "ar": (0, 1), "rb": (1, 2)}[self.query]

    @property
    def output_kind(self) -> Kind:
        return Kind.RELATIONSHIP if self.query == "ab" else Kind.ENTITY

    @property
    def input_kinds(self) -> tuple[Kind, Kind]:
        return tuple(SLOT_KINDS[i] for i in self.input_slots)

    @classmethod
    def make(cls, query: str, scope: Scope) -> "QuerySymbol":
        return cls(f"Q_{query}_{'I' if scope is Scope.IMAGE else 'K'}")

    def __str__(self):
        return self.value


SLOT_KINDS = (Kind.ENTITY, Kind.RELATIONSHIP, Kind.ENTITY)
_SYMBOLS = {s.value: s for s in QuerySymbol}


@dataclass(frozen=True)
class Leaf:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Apply:
    symbol: QuerySymbol
    left: "Layout"
    right: "Layout"

    def __str__(self):
        return serialize(self)


Layout = Union[Leaf, Apply]


def count_applies(layout: Layout) -> int:
    if isinstance(layout, Leaf):
        return 0
    return 1 + count_applies(layout.left) + count_applies(layout.right)


def depth(layout: Layout) -> int:
    if isinstance(layout, Leaf):
        return 0
    return 1 + max(depth(layout.left), depth(layout.right))


def leaves(layout: Layout) -> list[str]:
    if isinstance(layout, Leaf):
        return [layout.name]
    return leaves(layout.left) + leaves(layout.right)


def substitute(layout: Layout, mapping) -> Layout:
    """Replace leaf names found in ``mapping``."""
    if isinstance(layout, Leaf):
        return Leaf(mapping.get(layout.name, layout.name))
    return Apply(layout.symbol, substitute(layout.left, mapping), substitute(layout.right, mapping))


# -- tokens -------------------------------------------------------------------

class TokenKind(str, enum.Enum):
    OPEN = "("
    CLOSE = ")"
    SYMBOL = "symbol"
    NAME = "name"


class Token(NamedTuple):
    kind: TokenKind
    value: object = None

    def __repr__(self):
        if self.kind in (TokenKind.OPEN, TokenKind.CLOSE):
            return self.kind.value
        return f"{self.kind.value.capitalize()}({self.value})"


OPEN = Token(TokenKind.OPEN)
CLOSE = Token(TokenKind.CLOSE)


def tokenize(text: str) -> list[Token]:
    if not text or not text.strip():
        raise LexError("empty layout text")
    tokens = []
    for lexeme in text.replace("(", " ( ").replace(")", " ) ").split():
        if lexeme == "(":
            tokens.append(OPEN)
        elif lexeme == ")":
            tokens.append(CLOSE)
        elif lexeme.startswith("Q_"):
            if lexeme not in _SYMBOLS:
                raise LexError(f"unknown query symbol {lexeme!r}")
            tokens.append(Token(TokenKind.SYMBOL, _SYMBOLS[lexeme]))
        else:
            tokens.append(Token(TokenKind.NAME, lexeme))
    return tokens


def parse_shift_reduce(tokens: Iterable[Token]) -> Layout:
    """Shift tokens onto a stack and reduce ``( symbol child child )`` on Close."""
    tokens = list(tokens)
    if not tokens:
        raise ParseError("empty token stream")
    stack: list = []
    opens: list[tuple[int, int]] = []  # (stack height, token index) per pending Open
    for i, tok in enumerate(tokens):
        if tok.kind is TokenKind.OPEN:
            if i + 1 >= len(tokens) or tokens[i + 1].kind is not TokenKind.SYMBOL:
                raise ParseError("'(' must be followed by a query symbol", i)
            opens.append((len(stack), i))
        elif tok.kind is TokenKind.SYMBOL:
            if i == 0 or tokens[i - 1].kind is not TokenKind.OPEN:
                raise ParseError(f"query symbol {tok.value} outside head position", i)
            stack.append(tok.value)
        elif tok.kind is TokenKind.NAME:
            name = normalize(tok.value)
            if not name:
                raise ParseError(f"empty entry name {tok.value!r}", i)
            stack.append(Leaf(name))
        elif tok.kind is TokenKind.CLOSE:
            if not opens:
                raise ParseError("unbalanced ')'", i)
            frame = stack[opens.pop()[0]:]
            arity = len(frame) - 1
            if arity != 2:
                raise ParseError(f"{frame[0]} expects 2 arguments, got {arity}", i)
            del stack[-3:]
            stack.append(Apply(frame[0], frame[1], frame[2]))
        else:  # pragma: no cover
            raise ParseError(f"bad token {tok!r}", i)
    if opens:
        raise ParseError("unbalanced '(' never closed", opens[-1][1])
    if len(stack) != 1:
        raise ParseError(f"{len(stack)} items left on the stack", len(tokens) - 1)
    return stack[0]


def parse_layout(text: str) -> Layout:
    return parse_shift_reduce(tokenize(text))


def serialize(layout: Layout) -> str:
    if isinstance(layout, Leaf):
        return layout.name
    return f"({layout.symbol.value} {serialize(layout.left)} {serialize(layout.right)})"


def to_tokens(layout: Layout) -> list[Token]:
    if isinstance(layout, Leaf):
        return [Token(TokenKind.NAME, layout.name)]
    return [OPEN, Token(TokenKind.SYMBOL, layout.symbol), *to_tokens(layout.left),
            *to_tokens(layout.right), CLOSE]


def leaf_kinds(layout: Layout, expected: Optional[Kind] = None) -> list[tuple[str, Kind]]:
    """(name, kind) for each leaf, with kinds implied by parent slots.

    Raises :class:`QueryError` when a sub-query's output kind cannot fill the
    slot it is plugged into.
    """
    if isinstance(layout, Leaf):
        return [(layout.name, expected)]
    if expected is not None and layout.symbol.output_kind is not expected:
        raise QueryError(f"{layout.symbol} yields {layout.symbol.output_kind.value}s "
                         f"where {expected.value}s are required")
    lk, rk = layout.symbol.input_kinds
    return leaf_kinds(layout.left, lk) + leaf_kinds(layout.right, rk)


# -- questions -----------------------------------------------------------------

def normalize_question(text: str) -> str:
    return " ".join(text.strip().rstrip("?").strip().lower().split())


def parse_question(text: str, templates: "TemplateSet", vocabulary=None) -> Layout:
    """Exact template inversion of a machine-generated question.

    Every (template, binding) whose instantiation reproduces ``text`` is
    collected. If ``vocabulary`` (a container of entries) is given, bindings
    must name known entries of the right kind. A unique layout is returned;
    none raises :class:`UnparseableQuestion`, several raise
    :class:`AmbiguousQuestion`.
    """
    q = normalize_question(text)
    found = {}
    for template in templates:
        for layout in template.invert(q, templates.lexicon, vocabulary):
            found.setdefault(serialize(layout), layout)
    if not found:
        raise UnparseableQuestion(f"no template matches {text!r}")
    if len(found) > 1:
        raise AmbiguousQuestion(f"{len(found)} layouts match {text!r}: {sorted(found)}",
                                found.values())
    return next(iter(found.values()))
