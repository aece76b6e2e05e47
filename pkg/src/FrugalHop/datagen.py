"""
Stage-1 training data generation.

For every question the greedy best-of-n procedure runs twice, once with
FINISH allowed and once in exploration mode. At each hop every prompt set
proposes a step from the same shared context; the candidate whose new
documents give the highest recall joins the context. One of the two runs
is then chosen per question and its hops become supervised records.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import FrozenSet, List, Literal, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .domain import Dataset, Document, QAExample
from .errors import RetrievalError
from .metrics import doc_recall
from .policy import Policy
from .prompts import DEFAULT_PROMPT_SET, Action, HistoryStep, PromptSet, StepProposal, parse_step, render_react_prompt, serialize_step
from .retrieval import RetrievedSet, Retriever, dedup_against_context
from .rollout import HopRecord, Rollout, RolloutConfig, Termination
from .tools.files import read_jsonl, write_jsonl

# Configure logger
logger = logging.getLogger(__name__)


class Source(str, Enum):
    WITH_FINISH = "WITH_FINISH"
    NO_FINISH = "NO_FINISH"


class Candidate(BaseModel):
    """One prompt set's proposal for a hop and what it would add to the context."""
    model_config = ConfigDict(frozen=True)

    prompt_index: int = Field(ge=0)
    prompt_id: str
    proposal: StepProposal
    retrieved: RetrievedSet
    retrieval_ok: bool = True
    recall_gain: float = Field(ge=0.0)


class CandidateSet(BaseModel):
    """All candidates for one hop, generated from the same context."""
    model_config = ConfigDict(frozen=True)

    hop_index: int = Field(ge=1)
    context_titles: Tuple[str, ...] = ()
    candidates: Tuple[Candidate, ...]

    @model_validator(mode="after")
    def validate_candidates(self):
        if not self.candidates:
            raise ValueError("a candidate set needs at least one candidate")
        return self


class SftRecord(BaseModel):
    """One supervised example: context through hop h-1 in, the hop-h step out."""
    model_config = ConfigDict(frozen=True)

    example_id: str
    hop_index: int = Field(ge=1)
    input_text: str
    target_text: str
    source: Source

    @model_validator(mode="after")
    def validate_target(self):
        if not parse_step(self.target_text).parse_ok:
            raise ValueError(f"target for {self.example_id} hop {self.hop_index} does not parse")
        return self

    def to_record(self) -> dict:
        return {
            "example_id": self.example_id,
            "hop": self.hop_index,
            "input": self.input_text,
            "target": self.target_text,
            "source": self.source.value,
        }

    @classmethod
    def from_record(cls, record: dict) -> "SftRecord":
        return cls(example_id=record["example_id"], hop_index=record["hop"], input_text=record["input"],
                   target_text=record["target"], source=Source(record["source"]))


def _recall(titles: Sequence[str], gold_titles: FrozenSet[str]) -> float:
    return doc_recall(titles, gold_titles)


def select_best_candidate(candidate_set: CandidateSet, gold_titles: FrozenSet[str]) -> Candidate:
    """
    The candidate whose documents maximize recall of context + candidate.

    Among equal recalls a well-formed proposal beats an unparsed one, then
    the lowest prompt index wins. The caller appends the chosen documents to
    the context.
    """
    def rank(candidate: Candidate) -> Tuple[float, bool, int]:
        titles = list(candidate_set.context_titles) + [d.title for d in candidate.retrieved.documents]
        return -_recall(titles, gold_titles), not candidate.proposal.parse_ok, candidate.prompt_index

    return min(candidate_set.candidates, key=rank)


class GreedyRun(BaseModel):
    """A best-of-n rollout with its per-hop candidate sets and the prompt text at each hop."""
    model_config = ConfigDict(frozen=True)

    rollout: Rollout
    candidate_sets: Tuple[CandidateSet, ...]
    hop_inputs: Tuple[str, ...]


def run_best_of_n(example: QAExample, prompt_sets: Sequence[PromptSet], policy: Policy, retriever: Retriever,
                  config: RolloutConfig, sft_prompt_set: PromptSet = DEFAULT_PROMPT_SET) -> GreedyRun:
    """
    Greedy per-hop best-of-n rollout for one question.

    Whether FINISH is possible follows ``policy.allow_finish``. A FINISH
    candidate adds no documents; if it wins the selection the rollout ends.
    """
    if not prompt_sets:
        raise ValueError("at least one prompt set is required")
    gold = example.gold_titles
    if not gold:
        raise ValueError(f"example {example.id} has no gold titles")
    k = config.k

    context_ids: Set[str] = set()
    context: List[Document] = []
    initial, initial_ok = RetrievedSet(query=example.question, k=k), True
    if config.initial_retrieval:
        try:
            initial = retriever.search(example.question, k)
        except RetrievalError as e:
            logger.warning(f"Initial retrieval failed for {example.id}: {e}")
            initial_ok = False
        context_ids.update(initial.doc_ids)
        context.extend(initial.documents)

    hops: List[HopRecord] = []
    history: List[HistoryStep] = []
    candidate_sets: List[CandidateSet] = []
    hop_inputs: List[str] = []
    terminated_by = Termination.BUDGET
    for hop_index in range(1, config.max_policy_hops + 1):
        hop_inputs.append(render_react_prompt(example.question, history, sft_prompt_set, initial.documents))
        titles = [d.title for d in context]
        base_recall = _recall(titles, gold)

        candidates = []
        for prompt_index, prompt_set in enumerate(prompt_sets):
            proposal = policy.propose(example, hop_index, history, initial.documents, context, prompt_set)
            found, ok = RetrievedSet(query="", k=k), proposal.parse_ok
            if proposal.parse_ok and not proposal.is_finish:
                try:
                    found = retriever.search(proposal.search_query, k)
                except RetrievalError as e:
                    logger.warning(f"Retrieval failed for {example.id} hop {hop_index} prompt {prompt_set.id}: {e}")
                    found, ok = RetrievedSet(query=proposal.search_query, k=k), False
                found = dedup_against_context(found, context_ids)
            gain = _recall(titles + [d.title for d in found.documents], gold) - base_recall
            candidates.append(Candidate(prompt_index=prompt_index, prompt_id=prompt_set.id, proposal=proposal,
                                        retrieved=found, retrieval_ok=ok, recall_gain=max(gain, 0.0)))

        candidate_set = CandidateSet(hop_index=hop_index, context_titles=tuple(titles), candidates=tuple(candidates))
        candidate_sets.append(candidate_set)
        chosen = select_best_candidate(candidate_set, gold)
        hops.append(HopRecord(hop_index=hop_index, proposal=chosen.proposal, retrieved=chosen.retrieved,
                              retrieval_ok=chosen.retrieval_ok))
        if chosen.proposal.is_finish:
            terminated_by = Termination.FINISH
            break
        context_ids.update(chosen.retrieved.doc_ids)
        context.extend(chosen.retrieved.documents)
        if chosen.proposal.parse_ok:
            history.append(HistoryStep(thought=chosen.proposal.thought, action=Action.SEARCH,
                                       search_query=chosen.proposal.search_query,
                                       documents=chosen.retrieved.documents))

    h_term = sum(1 for hop in hops if hop.is_search) + (1 if config.initial_counted else 0)
    rollout = Rollout(
        example_id=example.id,
        question=example.question,
        initial_docs=initial,
        initial_retrieval_ok=initial_ok,
        initial_counted=config.initial_counted,
        hops=tuple(hops),
        h_term=h_term,
        terminated_by=terminated_by,
        budget=config.budget,
        context_ids=frozenset(context_ids),
    )
    return GreedyRun(rollout=rollout, candidate_sets=tuple(candidate_sets), hop_inputs=tuple(hop_inputs))


def sft_records_from_run(run: GreedyRun, source: Source) -> List[SftRecord]:
    """One record per well-formed hop of a greedy run."""
    records = []
    for hop, input_text in zip(run.rollout.hops, run.hop_inputs):
        if not hop.proposal.parse_ok:
            continue
        records.append(SftRecord(example_id=run.rollout.example_id, hop_index=hop.hop_index,
                                 input_text=input_text, target_text=serialize_step(hop.proposal), source=source))
    return records


def draw_sources(count: int, mixture: float, seed: int = 0) -> List[Source]:
    """Per-question record source: NO_FINISH with probability ``mixture``, drawn up front under the seed."""
    draws = np.random.default_rng(seed).random(count)
    return [Source.NO_FINISH if draw < mixture else Source.WITH_FINISH for draw in draws.tolist()]


class QuestionRuns(BaseModel):
    """Both greedy runs of a question and which one sourced its records (None if skipped)."""
    model_config = ConfigDict(frozen=True)

    example_id: str
    no_finish: GreedyRun
    with_finish: GreedyRun
    source: Optional[Source] = None


def generate_dataset(train: Dataset, prompts: Sequence[PromptSet], policy: Policy, retriever: Retriever,
                     config: RolloutConfig, mixture: float = 0.9, seed: int = 0,
                     source_policy: Literal["mixture", "finish_only"] = "mixture",
                     sft_prompt_set: PromptSet = DEFAULT_PROMPT_SET,
                     workers: int = 1) -> Tuple[List[QuestionRuns], List[SftRecord]]:
    """
    Generate supervised records for every training question.

    Args:
        train: Labeled questions (gold titles drive candidate selection)
        prompts: The n bootstrapped prompt sets proposing candidates
        policy: Step generator; its allow_finish flag is overridden per run
        retriever: Index or remote retriever
        config: Budget and retrieval settings
        mixture: Probability that a question's records come from the
            exploration (no-FINISH) run
        seed: Seed for the per-question source draw
        source_policy: "mixture" for the mixed sampling, "finish_only" to keep
            only FINISH-allowed runs that ended with FINISH
        sft_prompt_set: Prompt set used to render record inputs
        workers: Questions processed concurrently

    Returns:
        (runs per question, records in question order)
    """
    if not len(train):
        raise ValueError("training set is empty")
    if not 0.0 <= mixture <= 1.0:
        raise ValueError("mixture must lie in [0, 1]")
    if not prompts:
        raise ValueError("at least one prompt set is required")

    explore = policy.with_options(allow_finish=False)
    standard = policy.with_options(allow_finish=True)
    drawn = draw_sources(len(train), mixture, seed)

    def one(item: Tuple[QAExample, Source]) -> Optional[Tuple[QuestionRuns, List[SftRecord]]]:
        example, drawn_source = item
        if not example.gold_titles:
            logger.warning(f"Skipping {example.id}: no gold titles")
            return None
        no_finish = run_best_of_n(example, prompts, explore, retriever, config, sft_prompt_set)
        with_finish = run_best_of_n(example, prompts, standard, retriever, config, sft_prompt_set)

        if source_policy == "finish_only":
            source = Source.WITH_FINISH if with_finish.rollout.terminated_by is Termination.FINISH else None
        else:
            source = drawn_source

        records: List[SftRecord] = []
        if source is not None:
            records = sft_records_from_run(no_finish if source is Source.NO_FINISH else with_finish, source)
            if not records:
                logger.warning(f"Skipping {example.id}: no usable hops")
        return QuestionRuns(example_id=example.id, no_finish=no_finish, with_finish=with_finish,
                            source=source if records else None), records

    items = list(zip(train.examples, drawn))
    if workers <= 1:
        results = [one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))

    runs: List[QuestionRuns] = []
    records: List[SftRecord] = []
    for result in results:
        if result is None:
            continue
        runs.append(result[0])
        records.extend(result[1])
    logger.info(f"Generated {len(records)} records from {len(runs)} questions")
    return runs, records


def export_sft_jsonl(records: Sequence[SftRecord], path: Union[str, Path]) -> int:
    """Write records as {"example_id", "hop", "input", "target", "source"} lines."""
    count = write_jsonl(path, (record.to_record() for record in records))
    logger.info(f"Wrote {count} records to {path}")
    return count


def read_sft_jsonl(path: Union[str, Path]) -> List[SftRecord]:
    return [SftRecord.from_record(record) for record in read_jsonl(path)]
