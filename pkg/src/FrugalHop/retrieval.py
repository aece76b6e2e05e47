"""
BM25 retrieval over an in-memory inverted index, context deduplication and
a client for remote retrievers that speak the same search contract.
"""

import re
import json
import math
import logging
import threading
from collections import Counter
from pathlib import Path
from typing import AbstractSet, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import requests
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .domain import Document, load_corpus
from .errors import DatasetError, RetrievalError
from .tools.api import join_url, make_api_request
from .tools.files import write_jsonl

# Configure logger
logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+")

INDEX_META_FILE = "index.json"
INDEX_DOCS_FILE = "documents.jsonl"


def tokenize(text: str) -> List[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


class Hit(BaseModel):
    """A retrieved document and its score."""
    model_config = ConfigDict(frozen=True)

    document: Document
    score: float


class RetrievedSet(BaseModel):
    """Ranked documents returned for one query."""
    model_config = ConfigDict(frozen=True)

    query: str
    hits: Tuple[Hit, ...] = ()
    k: int = Field(ge=1)

    @model_validator(mode="after")
    def validate_ranking(self):
        if len(self.hits) > self.k:
            raise ValueError(f"{len(self.hits)} hits exceed k={self.k}")
        ids = [hit.document.doc_id for hit in self.hits]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate doc_id in hits")
        for prev, cur in zip(self.hits, self.hits[1:]):
            if (-prev.score, prev.document.doc_id) > (-cur.score, cur.document.doc_id):
                raise ValueError("hits must be sorted by score descending, then doc_id ascending")
        return self

    @property
    def documents(self) -> List[Document]:
        return [hit.document for hit in self.hits]

    @property
    def doc_ids(self) -> List[str]:
        return [hit.document.doc_id for hit in self.hits]


def rank_hits(scored: Iterable[Tuple[Document, float]], k: int) -> Tuple[Hit, ...]:
    """Order (document, score) pairs by score descending, ties by doc_id, and cut at k."""
    best: Dict[str, Tuple[Document, float]] = {}
    for document, score in scored:
        kept = best.get(document.doc_id)
        if kept is None or score > kept[1]:
            best[document.doc_id] = (document, score)
    ranked = sorted(best.values(), key=lambda pair: (-pair[1], pair[0].doc_id))
    return tuple(Hit(document=document, score=score) for document, score in ranked[:k])


class Retriever(Protocol):
    """Anything that can answer a top-k search."""

    def search(self, query: str, k: int) -> RetrievedSet:
        ...


class RetrieverIndex:
    """
    Immutable Okapi BM25 index.

    Build it with build_index; after that only reads happen, so one instance
    can serve any number of concurrent searches.
    """

    def __init__(self, documents: Sequence[Document], postings: Dict[str, Tuple[Tuple[int, int], ...]],
                 doc_lengths: Sequence[int], k1: float, b: float, include_title: bool):
        self._documents = tuple(documents)
        self._postings = dict(postings)
        self._doc_lengths = tuple(doc_lengths)
        self.k1 = k1
        self.b = b
        self.include_title = include_title
        self.avg_doc_length = sum(self._doc_lengths) / len(self._doc_lengths)

    @property
    def documents(self) -> Tuple[Document, ...]:
        return self._documents

    @property
    def postings(self) -> Dict[str, Tuple[Tuple[int, int], ...]]:
        return dict(self._postings)

    @property
    def doc_lengths(self) -> Tuple[int, ...]:
        return self._doc_lengths

    def __len__(self) -> int:
        return len(self._documents)

    def document_frequency(self, term: str) -> int:
        return len(self._postings.get(term, ()))

    def idf(self, term: str) -> float:
        n = len(self._documents)
        df = self.document_frequency(term)
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    def search(self, query: str, k: int = 3) -> RetrievedSet:
        """Top-k documents for query by BM25."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scores: Dict[int, float] = {}
        for term in dict.fromkeys(tokenize(query)):
            postings = self._postings.get(term)
            if not postings:
                continue
            idf = self.idf(term)
            for ordinal, tf in postings:
                dl = self._doc_lengths[ordinal]
                norm = 1.0 - self.b + self.b * dl / self.avg_doc_length if self.avg_doc_length > 0 else 1.0
                scores[ordinal] = scores.get(ordinal, 0.0) + idf * tf * (self.k1 + 1) / (tf + self.k1 * norm)
        hits = rank_hits(((self._documents[ordinal], score) for ordinal, score in scores.items()), k)
        return RetrievedSet(query=query, hits=hits, k=k)


def index_text(document: Document, include_title: bool = False) -> str:
    return f"{document.title} {document.text}" if include_title else document.text


def build_index(corpus: Sequence[Document], k1: float = 1.2, b: float = 0.75,
                include_title: bool = False) -> RetrieverIndex:
    """
    Build a BM25 index over a corpus.

    Args:
        corpus: Documents to index, in ordinal order
        k1: Term-frequency saturation, > 0
        b: Length normalization, in [0, 1]
        include_title: Index "title text" instead of the text alone

    Raises:
        ValueError: Empty corpus, duplicate doc_id, or parameters out of range
    """
    if not corpus:
        raise ValueError("cannot build an index over an empty corpus")
    if not k1 > 0:
        raise ValueError("k1 must be > 0")
    if not 0.0 <= b <= 1.0:
        raise ValueError("b must lie in [0, 1]")

    seen = set()
    postings: Dict[str, List[Tuple[int, int]]] = {}
    doc_lengths: List[int] = []
    for ordinal, document in enumerate(corpus):
        if document.doc_id in seen:
            raise ValueError(f"duplicate doc_id: {document.doc_id}")
        seen.add(document.doc_id)
        tokens = tokenize(index_text(document, include_title))
        doc_lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((ordinal, tf))

    index = RetrieverIndex(
        documents=corpus,
        postings={term: tuple(plist) for term, plist in postings.items()},
        doc_lengths=doc_lengths,
        k1=k1,
        b=b,
        include_title=include_title,
    )
    logger.info(f"Built BM25 index: {len(corpus)} documents, {len(postings)} terms, "
                f"avg length {index.avg_doc_length:.2f}")
    return index


def search(index: Retriever, query: str, k: int) -> RetrievedSet:
    """Run a top-k search against any retriever."""
    return index.search(query, k)


def dedup_against_context(hits: RetrievedSet, seen_ids: AbstractSet[str]) -> RetrievedSet:
    """Drop hits whose doc_id is already in the context, keeping order."""
    if not seen_ids:
        return hits
    kept = tuple(hit for hit in hits.hits if hit.document.doc_id not in seen_ids)
    return RetrievedSet(query=hits.query, hits=kept, k=hits.k)


def save_index(index: RetrieverIndex, directory: Union[str, Path]) -> Path:
    """Persist the corpus and BM25 parameters so load_index can rebuild the index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_jsonl(directory / INDEX_DOCS_FILE, (doc.model_dump() for doc in index.documents))
    meta = {
        "k1": index.k1,
        "b": index.b,
        "include_title": index.include_title,
        "num_documents": len(index),
        "avg_doc_length": index.avg_doc_length,
        "vocabulary_size": len(index.postings),
    }
    meta_path = directory / INDEX_META_FILE
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Saved index to {directory}")
    return meta_path


def load_index(directory: Union[str, Path]) -> RetrieverIndex:
    """Rebuild an index saved by save_index."""
    directory = Path(directory)
    meta_path = directory / INDEX_META_FILE
    if not meta_path.exists():
        raise DatasetError(f"no index metadata at {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    documents = load_corpus(directory / INDEX_DOCS_FILE)
    if len(documents) != meta["num_documents"]:
        raise DatasetError(f"index at {directory} lists {meta['num_documents']} documents, found {len(documents)}")
    return build_index(documents, k1=meta["k1"], b=meta["b"], include_title=meta.get("include_title", False))


class RemoteRetriever:
    """
    Client for an external retriever.

    POST {base_url}/search with {"query", "k"}; the reply is
    {"docs": [{"doc_id", "title", "text", "score"}, ...]}. Any transport
    failure or malformed body raises RetrievalError.

    Without an injected session each calling thread gets its own
    requests.Session, so rollout workers never share one.
    """

    def __init__(self, base_url: str, session: Optional[requests.Session] = None,
                 timeout: Optional[float] = None):
        self.url = join_url(base_url, "/search")
        self.timeout = timeout
        self._injected = session
        self._local = threading.local()
        self._lock = threading.Lock()
        self._sessions: List[requests.Session] = []

    @property
    def session(self) -> requests.Session:
        if self._injected is not None:
            return self._injected
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
            with self._lock:
                self._sessions.append(session)
        return session

    def search(self, query: str, k: int = 3) -> RetrievedSet:
        if k < 1:
            raise ValueError("k must be >= 1")
        result = make_api_request(self.url, {"query": query, "k": k}, session=self.session, timeout=self.timeout)
        if not result["success"]:
            raise RetrievalError(result["error"], status_code=result["status_code"])
        body = result["data"]
        if not isinstance(body, dict) or not isinstance(body.get("docs"), list):
            raise RetrievalError("retriever response has no 'docs' list")
        try:
            scored = [
                (Document(doc_id=str(d["doc_id"]), title=d["title"], text=d.get("text", "")), float(d["score"]))
                for d in body["docs"]
            ]
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise RetrievalError(f"malformed document in retriever response: {e}") from e
        return RetrievedSet(query=query, hits=rank_hits(scored, k), k=k)

    def close(self) -> None:
        if self._injected is not None:
            self._injected.close()
        with self._lock:
            sessions, self._sessions = self._sessions, []
        for session in sessions:
            session.close()
