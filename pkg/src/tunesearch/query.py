"""The combined boolean/melody query language.

A query is a flat sequence of text terms followed by melody literals::

    query   := (op? term)* melody*
    op      := "or" | "!"            (nothing means "and")
    term    := field? WORD
    field   := "[TITLE]" | "[ARTIST]" | "[LYRICS]" | "[ALBUM]"
    WORD    := alphanumeric run
    melody  := "[PIT:" symbols "]" | "[IOI:" symbols "]" | "[BTH:" pairs "]"

``!`` negates the single following term.  ``or`` separates conjunctions, so
"beethoven or mozart ![LYRICS]love" reads (beethoven) OR (mozart AND NOT
lyrics:love).  Melody symbols are the quantized contour alphabet ``*+-0``,
written contiguously; joined-notation literals are "(p,i)" pairs.  Field
tags and operators are case-insensitive; a leading "or" is meaningless and
treated as "and".

Execution normalizes to disjunctive normal form with negations moved to the
end of each conjunction, evaluates the text part against the lexical trees,
and then constrains melody-space search to the text result set.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

from . import textindex
from .metricspace import BTH, IOI_Q, PIT_Q, Pattern, PatternSpace, melody_search
from .textindex import TextIndex

AND = "AND"
OR = "OR"
NOT = "NOT"

TITLE = "TITLE"
ARTIST = "ARTIST"
LYRICS = "LYRICS"
ALBUM = "ALBUM"
NONE = "NONE"

FIELD_TAGS = {"TITLE": TITLE, "ARTIST": ARTIST, "LYRICS": LYRICS, "ALBUM": ALBUM}
NOTATION_TAGS = {"PIT": PIT_Q, "IOI": IOI_Q, "BTH": BTH}

_FIELD_TO_TREE = {TITLE: "title", ARTIST: "artist", LYRICS: "lyrics", ALBUM: "album", NONE: None}

_CONTOUR_RE = re.compile(r"[*+\-0]+$")
_BTH_PAIR_RE = re.compile(r"\(([*+\-0]),([*+\-0])\)")


class QueryParseError(ValueError):
    """The query text does not follow the grammar."""


class QueryNormalizeError(ValueError):
    """The parsed query cannot be put into executable normal form."""


@dataclass(frozen=True)
class TextTerm:
    op: str
    field: str
    word: str


@dataclass(frozen=True)
class MelodyLiteral:
    notation: str
    tokens: tuple


@dataclass(frozen=True)
class QueryAST:
    terms: tuple[TextTerm, ...]
    melodies: tuple[MelodyLiteral, ...]


@dataclass(frozen=True)
class Conjunct:
    positives: tuple[TextTerm, ...]
    negatives: tuple[TextTerm, ...]


@dataclass(frozen=True)
class DNFQuery:
    disjuncts: tuple[Conjunct, ...]
    melodies: tuple[MelodyLiteral, ...]


def _parse_melody_payload(tag: str, payload: str, chunk: str) -> MelodyLiteral:
    notation = NOTATION_TAGS[tag]
    if notation == BTH:
        pairs = _BTH_PAIR_RE.findall(payload)
        if not pairs or "".join(f"({a},{b})" for a, b in pairs) != payload:
            raise QueryParseError(f"malformed melody literal {chunk!r}")
        return MelodyLiteral(notation, tuple((a, b) for a, b in pairs))
    if not _CONTOUR_RE.match(payload):
        raise QueryParseError(f"malformed melody literal {chunk!r}")
    return MelodyLiteral(notation, tuple(payload))


def _parse_word(raw: str, chunk: str) -> str:
    tokens = textindex.tokenize(raw)
    if len(tokens) != 1 or textindex.fold(raw) != tokens[0]:
        raise QueryParseError(f"search word must be one alphanumeric run, got {chunk!r}")
    return tokens[0]


def parse(text: str) -> QueryAST:
    """Parse query text to its syntax tree."""
    chunks = text.split()
    if not chunks:
        raise QueryParseError("empty query")
    terms: list[TextTerm] = []
    melodies: list[MelodyLiteral] = []
    pending_op = None
    for chunk in chunks:
        if chunk.lower() == "or":
            if pending_op is not None:
                raise QueryParseError(f"operator {pending_op!r} followed by 'or'")
            pending_op = OR
            continue
        body = chunk
        op = pending_op or AND
        pending_op = None
        if body.startswith("!"):
            if op == OR:
                raise QueryParseError("'or' cannot directly precede '!'")
            op = NOT
            body = body[1:]
            if not body:
                raise QueryParseError("'!' must be attached to a term")
        field = NONE
        if body.startswith("["):
            end = body.find("]")
            if end < 0:
                raise QueryParseError(f"unclosed bracket in {chunk!r}")
            tag = body[1:end]
            rest = body[end + 1 :]
            head, _, payload = tag.partition(":")
            if head.upper() in NOTATION_TAGS:
                if op != AND or rest:
                    raise QueryParseError(f"melody literal cannot carry operators: {chunk!r}")
                melodies.append(_parse_melody_payload(head.upper(), payload, chunk))
                continue
            if tag.upper() not in FIELD_TAGS:
                raise QueryParseError(f"unknown field tag [{tag}]")
            field = FIELD_TAGS[tag.upper()]
            body = rest
            if not body:
                raise QueryParseError(f"field tag [{tag}] must be followed by a word")
        if melodies:
            raise QueryParseError("melody literals must come after all text terms")
        terms.append(TextTerm(op=op, field=field, word=_parse_word(body, chunk)))
    if pending_op is not None:
        raise QueryParseError("dangling 'or' at end of query")
    if terms and terms[0].op == OR:
        terms[0] = TextTerm(op=AND, field=terms[0].field, word=terms[0].word)
    if not terms and not melodies:
        raise QueryParseError("empty query")
    return QueryAST(terms=tuple(terms), melodies=tuple(melodies))


def render(ast: QueryAST) -> str:
    """Serialize a syntax tree back to query text (inverse of :func:`parse`)."""
    parts: list[str] = []
    for term in ast.terms:
        prefix = ""
        if term.op == OR:
            parts.append("or")
        elif term.op == NOT:
            prefix = "!"
        tag = "" if term.field == NONE else f"[{term.field}]"
        parts.append(f"{prefix}{tag}{term.word}")
    for lit in ast.melodies:
        tag = next(t for t, n in NOTATION_TAGS.items() if n == lit.notation)
        if lit.notation == BTH:
            payload = "".join(f"({a},{b})" for a, b in lit.tokens)
        else:
            payload = "".join(lit.tokens)
        parts.append(f"[{tag}:{payload}]")
    return " ".join(parts)


def to_dnf(ast: QueryAST) -> DNFQuery:
    """Split at "or" boundaries and move each conjunction's negations last."""
    groups: list[list[TextTerm]] = []
    for term in ast.terms:
        if term.op == OR or not groups:
            groups.append([])
        groups[-1].append(term)
    disjuncts = []
    for group in groups:
        positives = tuple(t for t in group if t.op != NOT)
        negatives = tuple(t for t in group if t.op == NOT)
        if not positives:
            raise QueryNormalizeError("conjunct must contain a positive term")
        disjuncts.append(Conjunct(positives=positives, negatives=negatives))
    return DNFQuery(disjuncts=tuple(disjuncts), melodies=ast.melodies)


def _term_postings(index: TextIndex, term: TextTerm) -> set[str]:
    return index.lookup(_FIELD_TO_TREE[term.field], term.word)


def evaluate_text(dnf: DNFQuery, index: TextIndex) -> set[str]:
    """Union of the conjunct results over the lexical trees."""
    result: set[str] = set()
    for conj in dnf.disjuncts:
        acc = textindex.combine("AND", [_term_postings(index, t) for t in conj.positives])
        if conj.negatives:
            acc = textindex.combine(
                "NOT", [acc] + [_term_postings(index, t) for t in conj.negatives]
            )
        result |= acc
    return result


def execute(
    dnf: DNFQuery,
    index: TextIndex,
    spaces: Mapping[str, PatternSpace],
    d1: float = 5.0,
) -> list[tuple[str, float | None]]:
    """Run the text-then-melody pipeline.

    Text-only queries return their posting set with no distances (ordering
    is the ranking layer's job).  Queries with melody literals search each
    literal's notation space, keep only tunes surviving the text constraint
    (when there is one), and fuse per tune by the minimum length-normalized
    distance, ascending.
    """
    if not dnf.disjuncts and not dnf.melodies:
        raise QueryNormalizeError("query has neither text terms nor melody literals")
    text_result: set[str] | None = None
    if dnf.disjuncts:
        text_result = evaluate_text(dnf, index)
    if not dnf.melodies:
        assert text_result is not None
        return [(tid, None) for tid in sorted(text_result)]

    best: dict[str, float] = {}
    for lit in dnf.melodies:
        space = spaces.get(lit.notation)
        if space is None:
            continue
        query_pattern = Pattern(lit.notation, lit.tokens)
        for pattern, dist in melody_search(space, query_pattern, d1):
            if text_result is not None and pattern.tune_id not in text_result:
                continue
            norm = dist / len(lit.tokens)
            cur = best.get(pattern.tune_id)
            if cur is None or norm < cur:
                best[pattern.tune_id] = norm
    return sorted(best.items(), key=lambda td: (td[1], td[0]))
