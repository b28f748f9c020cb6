"""Free-association mining over text search results.

Words that keep showing up near a tune's known metadata on result pages are
worth indexing ("Live Aid" for a song performed there, a product name from
an ad campaign).  A search client fetches ranked documents for a query built
from the tune's known fields; candidate words are those present in more than
a threshold fraction of the documents; each candidate is scored by

    delta = alpha * N/I + beta * mean_proximity + gamma * first_rank

where N is the result count, I the number of documents containing the word,
mean_proximity the average word-gap between the candidate and the nearest
query term over those I documents, and first_rank the earliest result rank
containing the word.  Lower delta means a stronger association: frequent,
close and early beats rare, distant and late.

Scoring is stateless and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .textindex import TuneRecord, tokenize

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.1
DEFAULT_GAMMA = 0.05
DEFAULT_THRESHOLD = 0.01

_stopwords_cache: frozenset[str] | None = None


def stopwords() -> frozenset[str]:
    """The bundled stopword list (lazy-loaded)."""
    global _stopwords_cache
    if _stopwords_cache is None:
        text = resources.files("tunesearch").joinpath("data/stopwords.txt").read_text("utf-8")
        _stopwords_cache = frozenset(
            line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
        )
    return _stopwords_cache


@dataclass(frozen=True)
class DocumentHit:
    """One search result: its 1-based rank and normalized word sequence."""

    rank: int
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class AssociationScore:
    """A candidate word with its matching-function value and evidence counts."""

    word: str
    delta: float
    support: int
    total: int

    def __post_init__(self) -> None:
        if not 1 <= self.support <= self.total:
            raise ValueError("support must satisfy 1 <= support <= total")


class SearchClient(Protocol):
    """Anything that can turn query terms into a ranked document list."""

    def search(self, terms: Sequence[str]) -> list[DocumentHit]: ...


class LocalDirectoryClient:
    """Deterministic stand-in for an external engine: one text file per
    document, matches ordered by file name."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def search(self, terms: Sequence[str]) -> list[DocumentHit]:
        wanted = set(terms)
        hits = []
        for path in sorted(self.root.glob("*.txt")):
            tokens = tuple(tokenize(path.read_text(encoding="utf-8")))
            if wanted & set(tokens):
                hits.append(DocumentHit(rank=len(hits) + 1, tokens=tokens))
        return hits


def proximity(word: str, anchors: Iterable[str], doc: DocumentHit) -> int:
    """Smallest count of words strictly between the word and any anchor.

    Adjacent occurrences give 0, as does an anchor at the word's own
    position.  Both the word and at least one anchor must occur.
    """
    anchor_set = set(anchors)
    word_pos = [i for i, t in enumerate(doc.tokens) if t == word]
    anchor_pos = [i for i, t in enumerate(doc.tokens) if t in anchor_set]
    if not word_pos:
        raise ValueError(f"word {word!r} does not occur in the document")
    if not anchor_pos:
        raise ValueError("no anchor occurs in the document")
    return min(max(0, abs(i - j) - 1) for i in word_pos for j in anchor_pos)


def extract_candidates(
    hits: Sequence[DocumentHit],
    query_terms: Iterable[str],
    threshold: float = DEFAULT_THRESHOLD,
) -> set[str]:
    """Words present in strictly more than ``threshold * len(hits)`` distinct
    documents, excluding stopwords and the query's own terms."""
    if not hits:
        raise ValueError("hits must be non-empty")
    excluded = set(query_terms) | stopwords()
    doc_counts: dict[str, int] = {}
    for hit in hits:
        for word in set(hit.tokens) - excluded:
            doc_counts[word] = doc_counts.get(word, 0) + 1
    cutoff = threshold * len(hits)
    return {w for w, c in doc_counts.items() if c > cutoff}


def score(
    word: str,
    hits: Sequence[DocumentHit],
    query_terms: Iterable[str],
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    gamma: float = DEFAULT_GAMMA,
) -> AssociationScore:
    """Evaluate the matching function for one candidate word."""
    terms = set(query_terms)
    containing = [h for h in hits if word in h.tokens]
    if not containing:
        raise ValueError(f"word {word!r} occurs in no hit")
    total = len(hits)
    support = len(containing)
    distance_sum = sum(proximity(word, terms, h) for h in containing)
    first_rank = min(h.rank for h in containing)
    delta = alpha * total / support + beta * distance_sum / support + gamma * first_rank
    return AssociationScore(word=word, delta=delta, support=support, total=total)


def query_terms_for(record: TuneRecord) -> list[str]:
    """Query the search engine with everything known: title, artists, album."""
    seen: dict[str, None] = {}
    for tok in tokenize(record.title):
        seen.setdefault(tok)
    for name, _role in record.artists:
        for tok in tokenize(name):
            seen.setdefault(tok)
    if record.release is not None:
        for tok in tokenize(record.release[1]):
            seen.setdefault(tok)
    return list(seen)


def mine(
    record: TuneRecord,
    client: SearchClient,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    gamma: float = DEFAULT_GAMMA,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[AssociationScore]:
    """Mine associations for a tune, strongest (lowest delta) first."""
    terms = query_terms_for(record)
    if not terms:
        raise ValueError("tune has no text fields to build a query from")
    hits = client.search(terms)
    if not hits:
        return []
    candidates = extract_candidates(hits, terms, threshold)
    scored = [score(w, hits, terms, alpha, beta, gamma) for w in sorted(candidates)]
    scored.sort(key=lambda s: (s.delta, s.word))
    return scored
