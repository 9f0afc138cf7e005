"""BM25 retrieval over a local document corpus.

A local inverted index stands in for live web search: sub-questions are
optimized to be searchable, so a ranked-snippet interface is all the rest of
the engine sees. The coarse stage is classic BM25; an optional fine stage
(:func:`refine`) asks the model to keep only the snippets relevant to the
sub-question. Anything that can search -- this index, or a future live web
client -- just has to provide ``search(query, k) -> list[Evidence]``.

Scoring uses the non-negative idf variant ``ln((N - df + 0.5)/(df + 0.5) + 1)``
so zero-overlap documents are the only ones excluded from rankings.
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
from dataclasses import dataclass

from .backend import ModelRequest, RequestTag
from .protocol import render_refine_prompt

logger = logging.getLogger(__name__)

__all__ = [
    "Document",
    "Evidence",
    "CorpusIndex",
    "tokenize",
    "index_corpus",
    "search",
    "refine",
    "load_corpus",
    "WebSearchStub",
    "DEFAULT_K1",
    "DEFAULT_B",
    "DEFAULT_K",
    "SNIPPET_CHARS",
]

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_K = 5
SNIPPET_CHARS = 300

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercased, punctuation-stripped whitespace tokens."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str


@dataclass(frozen=True)
class Evidence:
    doc_id: str
    snippet: str
    score: float


@dataclass
class CorpusIndex:
    k1: float
    b: float
    documents: dict[str, Document]
    postings: dict[str, dict[str, int]]  # term -> doc id -> term frequency
    doc_lengths: dict[str, int]
    avg_doc_length: float

    def search(self, query: str, k: int = DEFAULT_K) -> list[Evidence]:
        return search(self, query, k)


def index_corpus(documents, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> CorpusIndex:
    """Build an inverted index over document bodies."""
    if k1 <= 0:
        raise ValueError("k1 must be positive")
    if not 0 <= b <= 1:
        raise ValueError("b must lie in [0, 1]")
    docs: dict[str, Document] = {}
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in documents:
        if not doc.id:
            raise ValueError("document ids must be non-empty")
        if doc.id in docs:
            raise ValueError(f"duplicate document id: {doc.id!r}")
        docs[doc.id] = doc
        tokens = tokenize(doc.body)
        doc_lengths[doc.id] = len(tokens)
        for token in tokens:
            term = postings.setdefault(token, {})
            term[doc.id] = term.get(doc.id, 0) + 1
    total = sum(doc_lengths.values())
    avg = total / len(doc_lengths) if doc_lengths else 0.0
    return CorpusIndex(
        k1=k1, b=b, documents=docs, postings=postings,
        doc_lengths=doc_lengths, avg_doc_length=avg,
    )


def _idf(index: CorpusIndex, term: str) -> float:
    n_docs = len(index.documents)
    df = len(index.postings.get(term, {}))
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


def _query_terms(query: str) -> list[str]:
    # distinct terms in first-appearance order; duplicates score once
    seen: dict[str, None] = {}
    for token in tokenize(query):
        seen.setdefault(token)
    return list(seen)


def _snippet(body: str, terms: list[str]) -> str:
    """A window of the body centered on the first query-term hit."""
    lowered = body.lower()
    hit = -1
    for term in terms:
        position = lowered.find(term)
        if position != -1 and (hit == -1 or position < hit):
            hit = position
    if hit == -1:
        # tokenization strips punctuation, so a matched term may not appear
        # verbatim in the raw body; fall back to the opening of the document
        return body[:SNIPPET_CHARS]
    start = max(0, min(hit - SNIPPET_CHARS // 2, len(body) - SNIPPET_CHARS))
    return body[start:start + SNIPPET_CHARS]


def search(index: CorpusIndex, query: str, k: int = DEFAULT_K) -> list[Evidence]:
    """Top-k BM25 ranking; ties break on ascending document id.

    Documents sharing no term with the query are excluded entirely rather
    than padded in with zero scores.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    terms = _query_terms(query)
    scores: dict[str, float] = {}
    for term in terms:
        entry = index.postings.get(term)
        if not entry:
            continue
        idf = _idf(index, term)
        for doc_id, tf in entry.items():
            length = index.doc_lengths[doc_id]
            denom = tf + index.k1 * (1 - index.b + index.b * length / index.avg_doc_length)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (index.k1 + 1) / denom
    ranked = sorted(
        ((doc_id, score) for doc_id, score in scores.items() if score > 0.0),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return [
        Evidence(doc_id=doc_id, snippet=_snippet(index.documents[doc_id].body, terms), score=score)
        for doc_id, score in ranked[:k]
    ]


def refine(candidates, subq: str, backend) -> list:
    """Keep only the candidate snippets the model marks relevant to ``subq``.

    The model answers with reference numbers ("1,3") or "none". Malformed
    output keeps all candidates unchanged -- dropping evidence on a parse
    hiccup would silently starve the read step.
    """
    candidates = list(candidates)
    if not candidates:
        return []
    prompt = render_refine_prompt(subq, [c.snippet for c in candidates])
    response = backend.complete(ModelRequest(prompt=prompt, tag=RequestTag.REFINE))
    text = response.text.strip()
    picked = sorted({int(m) for m in re.findall(r"\d+", text)})
    valid = [i for i in picked if 1 <= i <= len(candidates)]
    if valid:
        return [candidates[i - 1] for i in valid]
    if not picked and "none" in text.lower():
        return []
    logger.warning("unusable refine selection %r; keeping all %d candidates", text, len(candidates))
    return candidates


def load_corpus(path) -> list[Document]:
    """Read a JSONL corpus of {"id", "title", "body"} rows."""
    documents = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                doc = Document(id=row["id"], title=row.get("title", ""), body=row["body"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad corpus row: {exc}") from exc
            if doc.id in seen:
                raise ValueError(f"{path}: line {lineno}: duplicate document id {doc.id!r}")
            seen.add(doc.id)
            documents.append(doc)
    return documents


class WebSearchStub:
    """Placeholder for a live web-search retriever.

    Documents the interface a browser-backed client must satisfy; using it
    without an implementation is an explicit error, never a silent no-op.
    """

    def search(self, query: str, k: int = DEFAULT_K) -> list[Evidence]:
        raise NotImplementedError(
            "live web search is not wired up; index a local corpus instead"
        )
