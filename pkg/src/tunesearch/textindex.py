"""Lexical trees over tune metadata and boolean posting-set algebra.

Every text field of a tune gets its own character trie mapping normalized
terms to posting sets of tune ids.  Matching is exact-term after
normalization (lowercased, diacritics folded, split on non-alphanumerics);
prefix search is deliberately out of scope.  Fieldless lookups union a fixed
priority order of trees.  One writer and any number of readers may run
concurrently; a reader sees a record either fully indexed or not at all.
"""

from __future__ import annotations

import re
import threading
import unicodedata
from dataclasses import dataclass
from typing import Iterable

ROLES = ("composer", "lyricist", "performer")
RELEASE_KINDS = ("album", "single", "bootleg")

#: trees a fieldless lookup consults, in priority order ("artist" fans out
#: over the three role trees)
SEARCH_ORDER = ("title", "artist", "album", "lyrics", "genre", "associations")

#: all trees kept by the index
TREE_NAMES = (
    "title",
    "composer",
    "lyricist",
    "performer",
    "album",
    "lyrics",
    "genre",
    "associations",
    "company",
    "performance",
)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# strokes and ligatures NFKD leaves alone
_FOLD_MAP = str.maketrans({"ł": "l", "Ł": "l", "đ": "d", "Đ": "d", "ø": "o", "Ø": "o"})


def fold(text: str) -> str:
    """Lowercase and strip diacritics."""
    text = text.translate(_FOLD_MAP)
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return stripped.casefold()


def tokenize(text: str) -> list[str]:
    """Normalized terms of a text: folded, split on non-alphanumerics."""
    return _TOKEN_RE.findall(fold(text))


@dataclass(frozen=True)
class TuneRecord:
    """Everything the database knows about one tune."""

    tune_id: str
    title: str = ""
    lyrics: str = ""
    genre: str = ""
    artists: tuple[tuple[str, str], ...] = ()
    release: tuple[str, str, int] | None = None
    performances: tuple[tuple[str, str], ...] = ()
    company: str = ""
    associations: tuple[tuple[str, float], ...] = ()
    pattern_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.tune_id:
            raise ValueError("tune_id must be non-empty")
        for name, role in self.artists:
            if role not in ROLES:
                raise ValueError(f"unknown artist role {role!r} for {name!r}")
        if self.release is not None and self.release[0] not in RELEASE_KINDS:
            raise ValueError(f"unknown release kind {self.release[0]!r}")


class _TrieNode:
    __slots__ = ("children", "postings")

    def __init__(self) -> None:
        self.children: dict[str, _TrieNode] = {}
        self.postings: set[str] = set()


class LexicalTree:
    """Character trie from normalized terms to posting sets of tune ids."""

    def __init__(self, field_name: str) -> None:
        self.field_name = field_name
        self._root = _TrieNode()

    def add(self, term: str, tune_id: str) -> None:
        node = self._root
        for ch in term:
            node = node.children.setdefault(ch, _TrieNode())
        node.postings.add(tune_id)

    def discard(self, term: str, tune_id: str) -> None:
        path = [self._root]
        for ch in term:
            node = path[-1].children.get(ch)
            if node is None:
                return
            path.append(node)
        path[-1].postings.discard(tune_id)
        # prune branches that no longer lead anywhere
        for i in range(len(path) - 1, 0, -1):
            node = path[i]
            if node.postings or node.children:
                break
            del path[i - 1].children[term[i - 1]]

    def lookup(self, term: str) -> set[str]:
        node = self._root
        for ch in term:
            node = node.children.get(ch)
            if node is None:
                return set()
        return set(node.postings)

    def terms(self) -> Iterable[str]:
        stack = [("", self._root)]
        while stack:
            prefix, node = stack.pop()
            if node.postings:
                yield prefix
            for ch, child in node.children.items():
                stack.append((prefix + ch, child))


def _field_terms(record: TuneRecord) -> dict[str, set[str]]:
    terms: dict[str, set[str]] = {name: set() for name in TREE_NAMES}
    terms["title"].update(tokenize(record.title))
    terms["lyrics"].update(tokenize(record.lyrics))
    terms["genre"].update(tokenize(record.genre))
    terms["company"].update(tokenize(record.company))
    for name, role in record.artists:
        terms[role].update(tokenize(name))
    if record.release is not None:
        terms["album"].update(tokenize(record.release[1]))
    for event, _date in record.performances:
        terms["performance"].update(tokenize(event))
    for word, _delta in record.associations:
        terms["associations"].update(tokenize(word))
    return terms


class TextIndex:
    """All lexical trees of the database plus per-tune bookkeeping."""

    def __init__(self) -> None:
        self.trees: dict[str, LexicalTree] = {name: LexicalTree(name) for name in TREE_NAMES}
        self._tune_terms: dict[str, dict[str, set[str]]] = {}
        self._lock = threading.RLock()

    def index_tune(self, record: TuneRecord) -> None:
        """Insert every text field of the record; re-indexing replaces."""
        with self._lock:
            self.remove_tune(record.tune_id)
            terms = _field_terms(record)
            for field_name, field_terms in terms.items():
                tree = self.trees[field_name]
                for term in field_terms:
                    tree.add(term, record.tune_id)
            self._tune_terms[record.tune_id] = terms

    def remove_tune(self, tune_id: str) -> None:
        with self._lock:
            terms = self._tune_terms.pop(tune_id, None)
            if terms is None:
                return
            for field_name, field_terms in terms.items():
                tree = self.trees[field_name]
                for term in field_terms:
                    tree.discard(term, tune_id)

    def _normalize_term(self, term: str) -> str:
        tokens = tokenize(term)
        if len(tokens) != 1:
            raise ValueError(f"lookup term must normalize to one token, got {term!r}")
        return tokens[0]

    def lookup(self, field: str | None, term: str) -> set[str]:
        """Posting set of an exact term.

        With a field name only that tree is searched ("artist" covers the
        composer, lyricist and performer trees).  With no field the trees of
        the priority order are searched and their postings unioned.
        """
        norm = self._normalize_term(term)
        with self._lock:
            if field is None or field == "":
                out: set[str] = set()
                for name in SEARCH_ORDER:
                    out |= self._lookup_tree(name, norm)
                return out
            return self._lookup_tree(field.lower(), norm)

    def _lookup_tree(self, name: str, term: str) -> set[str]:
        if name == "artist":
            out: set[str] = set()
            for role in ROLES:
                out |= self.trees[role].lookup(term)
            return out
        tree = self.trees.get(name)
        if tree is None:
            raise ValueError(f"unknown field {name!r}")
        return tree.lookup(term)

    def tune_ids(self) -> set[str]:
        with self._lock:
            return set(self._tune_terms)


def combine(op: str, sets: list[set[str]]) -> set[str]:
    """Boolean algebra over posting sets.

    AND intersects, OR unions.  NOT subtracts the trailing sets from the
    first (the accumulated positives); a bare NOT has nothing to subtract
    from and is rejected.
    """
    if op == "AND":
        if not sets:
            return set()
        out = set(sets[0])
        for s in sets[1:]:
            out &= s
        return out
    if op == "OR":
        out = set()
        for s in sets:
            out |= s
        return out
    if op == "NOT":
        if len(sets) < 2:
            raise ValueError("query must contain a positive term")
        out = set(sets[0])
        for s in sets[1:]:
            out -= s
        return out
    raise ValueError(f"unknown operator {op!r}")
