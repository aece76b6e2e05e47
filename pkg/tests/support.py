"""
Shared builders for the FrugalHop tests.
"""

from pathlib import Path
from typing import Dict, List, Sequence

import FrugalHop
from FrugalHop.domain import Document, QAExample
from FrugalHop.errors import RetrievalError
from FrugalHop.policy import Policy, PolicySpec, ScriptedBackendSpec
from FrugalHop.retrieval import RetrievedSet, rank_hits

DATA_DIR = Path(FrugalHop.__file__).parent / "data"
TOY_CORPUS = DATA_DIR / "toy_corpus.jsonl"
TOY_QUESTIONS = DATA_DIR / "toy_questions.jsonl"
TOY_POLICY = DATA_DIR / "toy_policy.json"


def doc(doc_id: str, title: str = None, text: str = "") -> Document:
    return Document(doc_id=doc_id, title=title or doc_id.upper(), text=text or f"text of {doc_id}")


def example(qid: str = "q1", question: str = "Where was the author born?", answers: Sequence[str] = ("Paris",),
            titles: Sequence[str] = ("A", "B")) -> QAExample:
    return QAExample(id=qid, question=question, gold_answers=tuple(answers), gold_titles=frozenset(titles))


def search(query: str) -> str:
    return f"Thought: look up {query}\nAction: Search[{query}]"


FINISH = "Thought: enough evidence\nAction: Finish[]"


def scripted_policy(traces: Dict[str, List[str]], answers: Dict[str, str] = None,
                    prompt_traces: Dict[str, Dict[str, List[str]]] = None, allow_finish: bool = True) -> Policy:
    backend = ScriptedBackendSpec(traces=traces, answers=answers or {}, prompt_traces=prompt_traces or {})
    return Policy(PolicySpec(backend=backend, allow_finish=allow_finish))


class StaticRetriever:
    """Returns a fixed document list per query, cut at k."""

    def __init__(self, table: Dict[str, List[Document]], default: List[Document] = ()):
        self.table = table
        self.default = list(default)
        self.queries: List[str] = []

    def search(self, query: str, k: int) -> RetrievedSet:
        self.queries.append(query)
        docs = self.table.get(query, self.default)
        scored = [(d, float(len(docs) - i)) for i, d in enumerate(docs)]
        return RetrievedSet(query=query, hits=rank_hits(scored, k), k=k)


class FailingRetriever(StaticRetriever):
    """Raises a transport error for selected queries."""

    def __init__(self, failing, table, default=()):
        super().__init__(table, default)
        self.failing = set(failing)

    def search(self, query, k):
        if query in self.failing:
            raise RetrievalError("retriever down", status_code=503)
        return super().search(query, k)
