"""BM25 index vs a brute-force oracle, snippets, and model-based refinement.

The oracle below recomputes scores from the textbook formula with no shared
code: its own tokenizer loop, its own df counts, a full scan over every
document. Agreement within 1e-9 is the correctness bar for the index.
"""

import math
import random
import string

import pytest
from hypothesis import given, settings, strategies as st

from selfhop.backend import RequestTag, load_script
from selfhop.retrieval import (
    DEFAULT_B,
    DEFAULT_K1,
    Document,
    index_corpus,
    load_corpus,
    refine,
    tokenize,
)


def oracle_scores(docs, query, k1=DEFAULT_K1, b=DEFAULT_B):
    """Independent full-scan BM25. Returns {doc_id: score} for scores > 0."""
    def toks(text):
        cleaned = "".join(" " if c in string.punctuation else c for c in text.lower())
        return cleaned.split()

    bodies = {d.id: toks(d.body) for d in docs}
    n = len(docs)
    avg_len = sum(len(t) for t in bodies.values()) / n if n else 0.0

    # distinct query terms, first occurrence order
    seen, terms = set(), []
    for t in toks(query):
        if t not in seen:
            seen.add(t)
            terms.append(t)

    out = {}
    for doc in docs:
        body = bodies[doc.id]
        score = 0.0
        for term in terms:
            df = sum(1 for other in bodies.values() if term in other)
            if df == 0:
                continue
            tf = body.count(term)
            if tf == 0:
                continue
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            norm = 1.0 - b + b * (len(body) / avg_len)
            score += idf * tf * (k1 + 1.0) / (tf + k1 * norm)
        if score > 0.0:
            out[doc.id] = score
    return out


def random_corpus(rng, max_docs=100):
    vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta",
             "theta", "iota", "kappa", "north", "south", "river", "film",
             "director", "born", "city", "country", "award", "novel"]
    n = rng.randint(2, max_docs)
    docs = []
    for i in range(n):
        body = " ".join(rng.choices(vocab, k=rng.randint(3, 60)))
        docs.append(Document(id=f"doc{i:03d}", title=f"t{i}", body=body))
    query = " ".join(rng.choices(vocab, k=rng.randint(1, 6)))
    return docs, query


# ---------------------------------------------------------------------------
# tokenization and index construction
# ---------------------------------------------------------------------------

def test_tokenize_lowercases_and_strips_punctuation():
    assert tokenize("Hello, World! It's 1952.") == ["hello", "world", "its", "1952"]


def test_index_rejects_duplicate_ids():
    docs = [Document("a", "t", "x"), Document("a", "t", "y")]
    with pytest.raises(ValueError, match="duplicate"):
        index_corpus(docs)


def test_index_rejects_bad_parameters():
    docs = [Document("a", "t", "body text")]
    with pytest.raises(ValueError):
        index_corpus(docs, k1=0.0)
    with pytest.raises(ValueError):
        index_corpus(docs, b=1.5)


def test_average_length_is_mean_of_doc_lengths():
    docs = [Document("a", "", "one two"), Document("b", "", "one two three four")]
    index = index_corpus(docs)
    assert index.avg_doc_length == 3.0
    assert index.doc_lengths == {"a": 2, "b": 4}


# ---------------------------------------------------------------------------
# search semantics
# ---------------------------------------------------------------------------

def test_search_matches_oracle_on_fixed_corpus():
    docs = [
        Document("a", "", "the quick brown fox jumps"),
        Document("b", "", "the lazy dog sleeps all day the dog"),
        Document("c", "", "quick quick quick brown"),
    ]
    index = index_corpus(docs)
    expected = oracle_scores(docs, "quick dog")
    got = {e.doc_id: e.score for e in index.search("quick dog", k=10)}
    assert set(got) == set(expected)
    for doc_id, score in expected.items():
        assert got[doc_id] == pytest.approx(score, abs=1e-9)


def test_search_orders_by_score_then_id():
    # twin documents tie exactly; ascending id breaks the tie
    docs = [
        Document("zzz", "", "shared token here"),
        Document("aaa", "", "shared token here"),
    ]
    index = index_corpus(docs)
    results = index.search("shared", k=5)
    assert [e.doc_id for e in results] == ["aaa", "zzz"]
    assert results[0].score == pytest.approx(results[1].score, abs=1e-12)


def test_search_excludes_zero_scores_and_caps_k():
    docs = [
        Document("hit", "", "needle in a haystack"),
        Document("miss", "", "nothing relevant at all"),
    ]
    index = index_corpus(docs)
    results = index.search("needle", k=5)
    assert [e.doc_id for e in results] == ["hit"]
    assert index.search("needle", k=1) == results[:1]
    with pytest.raises(ValueError):
        index.search("needle", k=0)


def test_search_no_hits_returns_empty():
    index = index_corpus([Document("a", "", "some words")])
    assert index.search("unrelated", k=3) == []


def test_repeated_query_terms_count_once():
    docs = [Document("a", "", "token token other"), Document("b", "", "token only")]
    index = index_corpus(docs)
    single = index.search("token", k=5)
    doubled = index.search("token token", k=5)
    assert [(e.doc_id, e.score) for e in single] == [(e.doc_id, e.score) for e in doubled]


def test_randomized_oracle_equivalence():
    rng = random.Random(417)
    for _ in range(20):
        docs, query = random_corpus(rng)
        index = index_corpus(docs)
        expected = oracle_scores(docs, query)
        got = {e.doc_id: e.score for e in index.search(query, k=len(docs))}
        assert set(got) == set(expected)
        for doc_id in expected:
            assert got[doc_id] == pytest.approx(expected[doc_id], abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_search_never_exceeds_k(seed):
    rng = random.Random(seed)
    docs, query = random_corpus(rng, max_docs=20)
    index = index_corpus(docs)
    k = rng.randint(1, 8)
    results = index.search(query, k=k)
    assert len(results) <= k
    scores = [e.score for e in results]
    assert scores == sorted(scores, reverse=True)


# ---------------------------------------------------------------------------
# snippets
# ---------------------------------------------------------------------------

def test_snippet_short_body_returned_whole():
    index = index_corpus([Document("a", "", "tiny body with needle inside")])
    [evidence] = index.search("needle", k=1)
    assert evidence.snippet == "tiny body with needle inside"


def test_snippet_centered_on_first_hit():
    body = ("x " * 400) + "needle" + (" y" * 400)
    index = index_corpus([Document("a", "", body)])
    [evidence] = index.search("needle", k=1)
    assert len(evidence.snippet) == 300
    assert "needle" in evidence.snippet


def test_snippet_window_clamped_at_end():
    body = ("padding " * 100).strip() + " needle"
    index = index_corpus([Document("a", "", body)])
    [evidence] = index.search("needle", k=1)
    assert len(evidence.snippet) == 300
    assert evidence.snippet == body[-300:]


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

def test_load_corpus_round_trip(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"id": "a", "title": "A", "body": "first body"}\n'
        '{"id": "b", "title": "B", "body": "second body"}\n',
        encoding="utf-8",
    )
    docs = load_corpus(path)
    assert [d.id for d in docs] == ["a", "b"]
    assert docs[1].body == "second body"


def test_load_corpus_reports_line_numbers(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"id": "a", "title": "", "body": "x"}\nnot json\n', encoding="utf-8")
    with pytest.raises(ValueError, match="line 2"):
        load_corpus(path)


def test_load_corpus_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"id": "a", "title": "", "body": "x"}\n{"id": "a", "title": "", "body": "y"}\n',
        encoding="utf-8",
    )
    with pytest.raises(ValueError, match="duplicate"):
        load_corpus(path)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def make_evidence(index, query="needle", k=3):
    docs = [
        Document("a", "", "needle one alpha"),
        Document("b", "", "needle two beta"),
        Document("c", "", "needle three gamma"),
    ]
    return index_corpus(docs).search(query, k=k)


def test_refine_keeps_selected_subset():
    candidates = make_evidence(None)
    backend = load_script([("Reference-Selection-Task", "1,3")])
    kept = refine(candidates, "q", backend)
    assert [e.doc_id for e in kept] == [candidates[0].doc_id, candidates[2].doc_id]


def test_refine_none_keeps_nothing():
    candidates = make_evidence(None)
    backend = load_script([("*", "none")])
    assert refine(candidates, "q", backend) == []


def test_refine_garbage_keeps_everything():
    candidates = make_evidence(None)
    backend = load_script([("*", "I cannot decide, sorry")])
    assert refine(candidates, "q", backend) == candidates


def test_refine_ignores_out_of_range_indices():
    candidates = make_evidence(None)
    backend = load_script([("*", "2, 9")])
    kept = refine(candidates, "q", backend)
    assert [e.doc_id for e in kept] == [candidates[1].doc_id]


def test_refine_output_is_subset_of_input():
    candidates = make_evidence(None)
    backend = load_script([("*", "3,1,2")])
    kept = refine(candidates, "q", backend)
    assert set(e.doc_id for e in kept) <= set(e.doc_id for e in candidates)
    # original candidate order preserved regardless of reply order
    assert [e.doc_id for e in kept] == [e.doc_id for e in candidates]


def test_refine_uses_refine_tag():
    candidates = make_evidence(None)
    backend = load_script([("*", "1")])
    refine(candidates, "q", backend)
    assert backend.requests[0][0] == RequestTag.REFINE


def test_refine_empty_candidates_short_circuits():
    backend = load_script([])  # would underrun on any call
    assert refine([], "q", backend) == []
