"""
The budgeted retrieve-and-reason loop.

A rollout optionally retrieves for the question itself (D_0), then asks the
policy for one step per hop: SEARCH hops retrieve k documents and keep only
those not already in the context, a FINISH hop ends the rollout. Nothing is
generated after FINISH.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .domain import Document, QAExample
from .errors import RetrievalError
from .metrics import doc_recall
from .policy import Policy
from .prompts import Action, HistoryStep, PromptSet, StepProposal
from .retrieval import Hit, RetrievedSet, Retriever, dedup_against_context
from .tools.files import read_jsonl, write_jsonl

# Configure logger
logger = logging.getLogger(__name__)


class Termination(str, Enum):
    FINISH = "FINISH"
    BUDGET = "BUDGET"


class RolloutConfig(BaseModel):
    """
    Budget and retrieval settings for a rollout.

    With count_initial_in_searches the initial retrieval uses one unit of the
    budget, so the total number of search operations never exceeds B.
    """
    model_config = ConfigDict(frozen=True)

    budget: int = Field(default=6, ge=1)
    k: int = Field(default=3, ge=1)
    initial_retrieval: bool = True
    count_initial_in_searches: bool = True

    @property
    def initial_counted(self) -> bool:
        return self.initial_retrieval and self.count_initial_in_searches

    @property
    def max_policy_hops(self) -> int:
        return self.budget - 1 if self.initial_counted else self.budget


class HopRecord(BaseModel):
    """One hop: the proposal, the documents it added and whether retrieval worked."""
    model_config = ConfigDict(frozen=True)

    hop_index: int = Field(ge=1)
    proposal: StepProposal
    retrieved: RetrievedSet
    retrieval_ok: bool = True

    @model_validator(mode="after")
    def validate_finish(self):
        if self.proposal.is_finish and self.retrieved.hits:
            raise ValueError("a FINISH hop retrieves nothing")
        return self

    @property
    def is_search(self) -> bool:
        return not self.proposal.is_finish

    @property
    def succeeded(self) -> bool:
        """Well-formed and, for searches, retrieved without a transport failure."""
        return self.proposal.parse_ok and (self.proposal.is_finish or self.retrieval_ok)


class Rollout(BaseModel):
    """The frozen record of one question's rollout."""
    model_config = ConfigDict(frozen=True)

    example_id: str
    question: str = ""
    initial_docs: RetrievedSet
    initial_retrieval_ok: bool = True
    initial_counted: bool = True
    hops: Tuple[HopRecord, ...] = ()
    h_term: int = Field(ge=0)
    terminated_by: Termination
    budget: int = Field(ge=1)
    context_ids: FrozenSet[str] = frozenset()
    answer: Optional[str] = None

    @model_validator(mode="after")
    def validate_structure(self):
        for i, hop in enumerate(self.hops):
            if hop.hop_index != i + 1:
                raise ValueError("hop indices must run 1..n in order")
            if hop.proposal.is_finish and i != len(self.hops) - 1:
                raise ValueError("no hop may follow a FINISH hop")
        if self.terminated_by is Termination.FINISH:
            if not self.hops or not self.hops[-1].proposal.is_finish:
                raise ValueError("a FINISH-terminated rollout must end with a FINISH hop")
        elif self.h_term != self.budget:
            raise ValueError(f"a budget-terminated rollout runs exactly B={self.budget} searches, got {self.h_term}")
        if self.h_term > self.budget:
            raise ValueError(f"h_term={self.h_term} exceeds budget {self.budget}")

        ids: List[str] = list(self.initial_docs.doc_ids)
        for hop in self.hops:
            ids.extend(hop.retrieved.doc_ids)
        if len(ids) != len(set(ids)):
            raise ValueError("context documents must be pairwise distinct")
        if set(ids) != set(self.context_ids):
            raise ValueError("context_ids must equal the union of retrieved doc_ids")
        return self

    @property
    def search_hops(self) -> List[HopRecord]:
        return [hop for hop in self.hops if hop.is_search]

    def context_documents(self) -> List[Document]:
        """All context documents in retrieval order, D_0 first."""
        docs = list(self.initial_docs.documents)
        for hop in self.hops:
            docs.extend(hop.retrieved.documents)
        return docs

    def search_operations(self) -> List[List[Document]]:
        """
        Documents added by each counted search operation, in order.

        When D_0 is not counted its documents are folded into the first
        operation, so they still count toward recall.
        """
        operations = [list(hop.retrieved.documents) for hop in self.search_hops]
        initial = list(self.initial_docs.documents)
        if self.initial_counted:
            return [initial] + operations
        if operations:
            operations[0] = initial + operations[0]
        return operations

    def to_record(self) -> dict:
        """JSONL form: the documented fields plus the context documents and scores."""
        record = {
            "example_id": self.example_id,
            "question": self.question,
            "h_term": self.h_term,
            "terminated_by": self.terminated_by.value,
            "budget": self.budget,
            "initial_counted": self.initial_counted,
            "initial_retrieval_ok": self.initial_retrieval_ok,
            "initial_doc_ids": self.initial_docs.doc_ids,
            "initial_scores": [hit.score for hit in self.initial_docs.hits],
            "initial_query": self.initial_docs.query,
            "k": self.initial_docs.k,
            "hops": [
                {
                    "thought": hop.proposal.thought,
                    "action": hop.proposal.action.value,
                    "query": hop.proposal.search_query,
                    "doc_ids": hop.retrieved.doc_ids,
                    "scores": [hit.score for hit in hop.retrieved.hits],
                    "retrieval_ok": hop.retrieval_ok,
                    "parse_ok": hop.proposal.parse_ok,
                    "raw_text": hop.proposal.raw_text,
                }
                for hop in self.hops
            ],
            "context": [doc.model_dump() for doc in self.context_documents()],
        }
        if self.answer is not None:
            record["answer"] = self.answer
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Rollout":
        documents: Dict[str, Document] = {d["doc_id"]: Document(**d) for d in record.get("context", [])}
        k = record.get("k", 3)

        def retrieved(query: str, doc_ids: Sequence[str], scores: Optional[Sequence[float]]) -> RetrievedSet:
            scores = scores if scores is not None else [0.0] * len(doc_ids)
            hits = tuple(Hit(document=documents[doc_id], score=score) for doc_id, score in zip(doc_ids, scores))
            return RetrievedSet(query=query, hits=hits, k=max(k, len(hits), 1))

        hops = []
        for i, hop in enumerate(record.get("hops", []), start=1):
            action = Action(hop["action"])
            proposal = StepProposal(
                thought=hop.get("thought", ""),
                action=action,
                search_query=hop.get("query") if action is Action.SEARCH else None,
                raw_text=hop.get("raw_text", ""),
                parse_ok=hop.get("parse_ok", True),
            )
            hops.append(HopRecord(
                hop_index=i,
                proposal=proposal,
                retrieved=retrieved(hop.get("query") or "", hop.get("doc_ids", []), hop.get("scores")),
                retrieval_ok=hop.get("retrieval_ok", True),
            ))
        initial = retrieved(record.get("initial_query", record.get("question", "")),
                            record.get("initial_doc_ids", []), record.get("initial_scores"))
        context_ids = set(initial.doc_ids)
        for hop in hops:
            context_ids.update(hop.retrieved.doc_ids)
        return cls(
            example_id=record["example_id"],
            question=record.get("question", ""),
            initial_docs=initial,
            initial_retrieval_ok=record.get("initial_retrieval_ok", True),
            initial_counted=record.get("initial_counted", True),
            hops=tuple(hops),
            h_term=record["h_term"],
            terminated_by=Termination(record["terminated_by"]),
            budget=record.get("budget", 6),
            context_ids=frozenset(context_ids),
            answer=record.get("answer"),
        )


def _empty(query: str, k: int) -> RetrievedSet:
    return RetrievedSet(query=query, hits=(), k=k)


def _safe_search(retriever: Retriever, query: str, k: int, label: str) -> Tuple[RetrievedSet, bool]:
    try:
        return retriever.search(query, k), True
    except RetrievalError as e:
        logger.warning(f"Retrieval failed for {label}: {e}")
        return _empty(query, k), False


def run_rollout(question: QAExample, policy: Policy, retriever: Retriever, config: RolloutConfig,
                prompt_set: Optional[PromptSet] = None) -> Rollout:
    """
    Execute one budgeted rollout.

    Retrieval failures are recorded on the hop (retrieval_ok = False) and
    policy failures as unparsed hops; neither aborts the loop. Both count as
    search operations.
    """
    k = config.k
    context_ids: Set[str] = set()
    context: List[Document] = []

    initial, initial_ok = _empty(question.question, k), True
    if config.initial_retrieval:
        initial, initial_ok = _safe_search(retriever, question.question, k, f"{question.id} initial retrieval")
        context_ids.update(initial.doc_ids)
        context.extend(initial.documents)

    hops: List[HopRecord] = []
    history: List[HistoryStep] = []
    terminated_by = Termination.BUDGET
    for hop_index in range(1, config.max_policy_hops + 1):
        proposal = policy.propose(question, hop_index, history, initial.documents, context, prompt_set)

        if proposal.is_finish:
            hops.append(HopRecord(hop_index=hop_index, proposal=proposal, retrieved=_empty("", k)))
            terminated_by = Termination.FINISH
            break

        if not proposal.parse_ok:
            logger.warning(f"Unparseable step for {question.id} hop {hop_index}")
            hops.append(HopRecord(hop_index=hop_index, proposal=proposal, retrieved=_empty("", k),
                                  retrieval_ok=False))
            continue

        found, ok = _safe_search(retriever, proposal.search_query, k, f"{question.id} hop {hop_index}")
        found = dedup_against_context(found, context_ids)
        context_ids.update(found.doc_ids)
        context.extend(found.documents)
        hops.append(HopRecord(hop_index=hop_index, proposal=proposal, retrieved=found, retrieval_ok=ok))
        history.append(HistoryStep(thought=proposal.thought, action=Action.SEARCH,
                                   search_query=proposal.search_query, documents=found.documents))

    h_term = sum(1 for hop in hops if hop.is_search) + (1 if config.initial_counted else 0)
    return Rollout(
        example_id=question.id,
        question=question.question,
        initial_docs=initial,
        initial_retrieval_ok=initial_ok,
        initial_counted=config.initial_counted,
        hops=tuple(hops),
        h_term=h_term,
        terminated_by=terminated_by,
        budget=config.budget,
        context_ids=frozenset(context_ids),
    )


def recall_trajectory(rollout: Rollout, gold_titles: FrozenSet[str]) -> List[float]:
    """Document recall of the accumulated context after each search operation."""
    if not gold_titles:
        raise ValueError("recall_trajectory needs at least one gold title")
    titles: List[str] = []
    trajectory = []
    for documents in rollout.search_operations():
        titles.extend(doc.title for doc in documents)
        trajectory.append(doc_recall(titles, gold_titles))
    return trajectory


def generate_answer(rollout: Rollout, generator: Policy) -> str:
    """
    Ask the answer generator for the final answer over the full context.

    The raw text is returned; normalization happens when scoring. Generator
    transport failures propagate.
    """
    return generator.answer(rollout.example_id, rollout.question, rollout.context_documents())


def run_rollouts(examples: Sequence[QAExample], policy: Policy, retriever: Retriever, config: RolloutConfig,
                 workers: int = 1, with_answers: bool = False,
                 progress: Optional[Callable[[Rollout], None]] = None) -> List[Rollout]:
    """
    Run one rollout per example on a thread pool; results keep input order.

    Each rollout stays on one worker; the retriever and policy are shared.
    """
    def one(example: QAExample) -> Rollout:
        rollout = run_rollout(example, policy, retriever, config)
        if with_answers:
            rollout = rollout.model_copy(update={"answer": generate_answer(rollout, policy)})
        if progress is not None:
            progress(rollout)
        return rollout

    if workers <= 1:
        return [one(example) for example in examples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, examples))


def write_rollouts(rollouts: Sequence[Rollout], path: Union[str, Path]) -> int:
    """Write rollouts as JSONL in the given order."""
    count = write_jsonl(path, (rollout.to_record() for rollout in rollouts))
    logger.info(f"Wrote {count} rollouts to {path}")
    return count


def read_rollouts(path: Union[str, Path]) -> List[Rollout]:
    """Read rollouts written by write_rollouts."""
    return [Rollout.from_record(record) for record in read_jsonl(path)]
