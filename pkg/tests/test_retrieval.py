"""
Tests for the FrugalHop retrieval module.
"""

import math
import unittest
import tempfile
import threading
from collections import Counter
from pathlib import Path
from unittest.mock import MagicMock, patch

import requests
from pydantic import ValidationError

from FrugalHop.domain import Document, load_corpus
from FrugalHop.errors import RetrievalError
from FrugalHop.retrieval import (
    Hit,
    RemoteRetriever,
    RetrievedSet,
    build_index,
    dedup_against_context,
    load_index,
    save_index,
    search,
    tokenize,
)

from .support import TOY_CORPUS, doc


def brute_force_bm25(corpus, query, k1=1.2, b=0.75, include_title=False):
    """Score every document from scratch, the slow way."""
    texts = [tokenize(f"{d.title} {d.text}" if include_title else d.text) for d in corpus]
    n = len(corpus)
    avg = sum(len(t) for t in texts) / n
    scores = {}
    for d, tokens in zip(corpus, texts):
        counts = Counter(tokens)
        total = 0.0
        for term in set(tokenize(query)):
            df = sum(1 for t in texts if term in t)
            if term not in counts:
                continue
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            tf = counts[term]
            total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(tokens) / avg))
        if total > 0:
            scores[d.doc_id] = total
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


class TestBuildIndex(unittest.TestCase):
    """Test index construction."""

    def test_single_document(self):
        """Test postings and average length for a one-document corpus."""
        index = build_index([Document(doc_id="0", title="cat", text="sat")])
        self.assertEqual(index.postings, {"sat": ((0, 1),)})
        index = build_index([Document(doc_id="0", title="t", text="cat sat")])
        self.assertEqual(index.postings, {"cat": ((0, 1),), "sat": ((0, 1),)})
        self.assertEqual(index.avg_doc_length, 2)

    def test_title_indexing_is_opt_in(self):
        """Test that include_title prefixes the title to the indexed text."""
        index = build_index([Document(doc_id="0", title="t", text="cat sat")], include_title=True)
        self.assertEqual(index.postings, {"t": ((0, 1),), "cat": ((0, 1),), "sat": ((0, 1),)})
        self.assertEqual(index.avg_doc_length, 3)
        self.assertTrue(index.include_title)
        self.assertFalse(build_index([doc("d1")]).include_title)

    def test_duplicate_doc_id(self):
        """Test that duplicate doc ids are rejected."""
        with self.assertRaises(ValueError):
            build_index([doc("d1"), doc("d1")])

    def test_empty_corpus(self):
        """Test that an empty corpus is rejected."""
        with self.assertRaises(ValueError):
            build_index([])

    def test_bad_parameters(self):
        """Test the k1 > 0 and b in [0, 1] preconditions."""
        with self.assertRaises(ValueError):
            build_index([doc("d1")], k1=0)
        with self.assertRaises(ValueError):
            build_index([doc("d1")], b=1.5)

    def test_document_frequencies_match_scan(self):
        """Test toy-corpus document frequencies against a brute-force scan."""
        corpus = load_corpus(TOY_CORPUS)
        index = build_index(corpus)
        token_sets = [set(tokenize(d.text)) for d in corpus]
        vocabulary = set().union(*token_sets)
        for term in vocabulary:
            self.assertEqual(index.document_frequency(term), sum(1 for s in token_sets if term in s), term)
        self.assertEqual(sum(index.doc_lengths) / len(corpus), index.avg_doc_length)


class TestSearch(unittest.TestCase):
    """Test BM25 search."""

    def setUp(self):
        self.corpus = [
            Document(doc_id=f"d{i}", title=f"Doc {i}", text=text)
            for i, text in enumerate([
                "red apples grow in the orchard",
                "green pears and red cherries",
                "the river runs past the mill",
                "apples and pears in a basket",
                "a mill grinds wheat into flour",
                "cherries ripen in early summer",
                "the orchard has a stone wall",
                "flour and water make dough",
                "summer rain on the river",
                "a basket of green apples",
            ])
        ]
        self.index = build_index(self.corpus)

    def test_unique_term_ranks_first(self):
        """Test that the only document containing a term comes first."""
        result = search(self.index, "wheat", 3)
        self.assertEqual(result.doc_ids[0], "d4")

    def test_no_indexed_terms(self):
        """Test that a query without indexed tokens returns no hits."""
        result = search(self.index, "zebra quantum", 3)
        self.assertEqual(result.hits, ())
        self.assertEqual(search(self.index, "", 3).hits, ())

    def test_matches_brute_force(self):
        """Test two-term queries against exhaustive scoring."""
        for query in ("red apples", "river mill", "green basket", "summer flour"):
            expected = brute_force_bm25(self.corpus, query)[:3]
            result = self.index.search(query, 3)
            self.assertEqual(result.doc_ids, [doc_id for doc_id, _ in expected], query)
            for hit, (_, score) in zip(result.hits, expected):
                self.assertAlmostEqual(hit.score, score, places=9)

    def test_results_are_sorted_and_unique(self):
        """Test ordering and distinctness of hits."""
        result = self.index.search("apples pears cherries red green", 5)
        self.assertLessEqual(len(result.hits), 5)
        self.assertEqual(len(set(result.doc_ids)), len(result.doc_ids))
        scores = [hit.score for hit in result.hits]
        self.assertEqual(scores, sorted(scores, reverse=True))

    def test_k_must_be_positive(self):
        """Test the k >= 1 precondition."""
        with self.assertRaises(ValueError):
            self.index.search("apples", 0)

    def test_repeated_query_terms_count_once(self):
        """Test that repeating a query term does not change the scores."""
        self.assertEqual(self.index.search("apples", 3), self.index.search("apples apples", 3).model_copy(
            update={"query": "apples"}))

    def test_save_and_load(self):
        """Test that a saved index reloads with identical results."""
        with tempfile.TemporaryDirectory() as tempdir:
            save_index(self.index, tempdir)
            self.assertTrue((Path(tempdir) / "index.json").exists())
            loaded = load_index(tempdir)
        self.assertEqual(loaded.postings, self.index.postings)
        self.assertEqual(loaded.search("red apples", 3), self.index.search("red apples", 3))

    def test_title_option_survives_reload(self):
        """Test that a title-indexed index reloads with titles still indexed."""
        titled = build_index(self.corpus, include_title=True)
        self.assertEqual(set(titled.search("doc", 10).doc_ids), {d.doc_id for d in self.corpus})
        self.assertEqual(self.index.search("doc", 10).hits, ())
        with tempfile.TemporaryDirectory() as tempdir:
            save_index(titled, tempdir)
            loaded = load_index(tempdir)
        self.assertTrue(loaded.include_title)
        self.assertEqual(loaded.search("red doc", 3), titled.search("red doc", 3))
        for query in ("red apples", "doc 3"):
            expected = brute_force_bm25(self.corpus, query, include_title=True)[:3]
            self.assertEqual(titled.search(query, 3).doc_ids, [doc_id for doc_id, _ in expected], query)


class TestRetrievedSet(unittest.TestCase):
    """Test RetrievedSet invariants and deduplication."""

    def _set(self, *ids):
        hits = tuple(Hit(document=doc(i), score=float(10 - n)) for n, i in enumerate(ids))
        return RetrievedSet(query="q", hits=hits, k=3)

    def test_rejects_more_than_k(self):
        """Test that at most k hits are allowed."""
        with self.assertRaises(ValidationError):
            RetrievedSet(query="q", hits=tuple(Hit(document=doc(f"d{i}"), score=1.0) for i in range(4)), k=3)

    def test_rejects_unsorted(self):
        """Test that hits must be sorted by score."""
        hits = (Hit(document=doc("d1"), score=1.0), Hit(document=doc("d2"), score=2.0))
        with self.assertRaises(ValidationError):
            RetrievedSet(query="q", hits=hits, k=3)

    def test_dedup_examples(self):
        """Test the documented deduplication examples."""
        self.assertEqual(dedup_against_context(self._set("d2", "d3"), {"d1", "d2"}).doc_ids, ["d3"])
        hits = self._set("d2", "d3")
        self.assertEqual(dedup_against_context(hits, set()), hits)
        self.assertEqual(dedup_against_context(hits, {"d2", "d3", "d9"}).hits, ())

    def test_dedup_same_query_twice(self):
        """Test that retrieving the same query twice adds nothing new."""
        index = build_index(load_corpus(TOY_CORPUS))
        first = index.search("Oskar Velmont", 3)
        second = dedup_against_context(index.search("Oskar Velmont", 3), set(first.doc_ids))
        self.assertEqual(second.hits, ())


class TestRemoteRetriever(unittest.TestCase):
    """Test the remote retriever client with a mocked session."""

    def _session(self, status=200, body=None, error=None):
        session = MagicMock(spec=requests.Session)
        if error is not None:
            session.post.side_effect = error
        else:
            response = MagicMock()
            response.status_code = status
            response.json.return_value = body
            session.post.return_value = response
        return session

    def test_search(self):
        """Test that a well-formed reply becomes a ranked RetrievedSet."""
        body = {"docs": [
            {"doc_id": "b", "title": "B", "text": "bb", "score": 1.0},
            {"doc_id": "a", "title": "A", "text": "aa", "score": 2.0},
        ]}
        session = self._session(body=body)
        retriever = RemoteRetriever("http://retriever.local/", session=session, timeout=5)
        result = retriever.search("query", 3)
        self.assertEqual(result.doc_ids, ["a", "b"])
        url = session.post.call_args[0][0]
        self.assertEqual(url, "http://retriever.local/search")
        self.assertEqual(session.post.call_args[1]["json"], {"query": "query", "k": 3})

    def test_http_error(self):
        """Test that a non-2xx reply raises RetrievalError."""
        retriever = RemoteRetriever("http://retriever.local", session=self._session(status=500, body={}))
        with self.assertRaises(RetrievalError) as ctx:
            retriever.search("query", 3)
        self.assertEqual(ctx.exception.status_code, 500)

    def test_connection_error(self):
        """Test that a connection failure raises RetrievalError."""
        session = self._session(error=requests.exceptions.ConnectionError("down"))
        with self.assertRaises(RetrievalError):
            RemoteRetriever("http://retriever.local", session=session).search("query", 3)

    def test_malformed_body(self):
        """Test that a reply without a docs list raises RetrievalError."""
        retriever = RemoteRetriever("http://retriever.local", session=self._session(body={"results": []}))
        with self.assertRaises(RetrievalError):
            retriever.search("query", 3)

    def test_one_session_per_thread(self):
        """Test that worker threads get their own session and close releases all of them."""
        created = []

        def new_session():
            created.append(self._session(body={"docs": []}))
            return created[-1]

        with patch("FrugalHop.retrieval.requests.Session", side_effect=new_session):
            retriever = RemoteRetriever("http://retriever.local")
            retriever.search("first", 3)
            retriever.search("second", 3)
            worker = threading.Thread(target=retriever.search, args=("third", 3))
            worker.start()
            worker.join()
        self.assertEqual(len(created), 2)
        self.assertEqual(created[0].post.call_count, 2)
        self.assertEqual(created[1].post.call_count, 1)
        retriever.close()
        for session in created:
            session.close.assert_called_once()


if __name__ == "__main__":
    unittest.main()
