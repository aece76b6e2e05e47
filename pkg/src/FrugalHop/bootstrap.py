"""
Few-shot prompt bootstrapping.

Traces that reach a correct answer (exact match, or a gold answer present in
the retrieved passages) become demonstrations. Candidate prompt sets are
random subsets of those demonstrations; each is scored on a validation set
and the best ones are kept.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .domain import QAExample
from .metrics import answer_passage_match, exact_match
from .policy import Policy
from .prompts import Action, HistoryStep, PromptSet, render_demo
from .retrieval import Retriever
from .rollout import Rollout, RolloutConfig, run_rollouts

# Configure logger
logger = logging.getLogger(__name__)


def history_from_rollout(rollout: Rollout) -> List[HistoryStep]:
    """The well-formed SEARCH hops of a rollout, as prompt history."""
    return [
        HistoryStep(thought=hop.proposal.thought, action=Action.SEARCH,
                    search_query=hop.proposal.search_query, documents=hop.retrieved.documents)
        for hop in rollout.hops
        if hop.is_search and hop.proposal.parse_ok
    ]


def is_successful(rollout: Rollout, example: QAExample) -> bool:
    answer = rollout.answer or ""
    if exact_match(answer, example.gold_answers) == 1.0:
        return True
    return answer_passage_match(rollout.context_documents(), example.gold_answers) == 1.0


def harvest_demos(rollouts: Sequence[Rollout], examples: Sequence[QAExample]) -> List[str]:
    """Render every successful rollout as a demonstration, in input order."""
    by_id = {example.id: example for example in examples}
    demos = []
    for rollout in rollouts:
        example = by_id[rollout.example_id]
        if not is_successful(rollout, example):
            continue
        demos.append(render_demo(rollout.question, rollout.initial_docs.documents,
                                 history_from_rollout(rollout), rollout.answer or ""))
    return demos


def score_prompt_set(prompt_set: PromptSet, policy: Policy, validation: Sequence[QAExample], retriever: Retriever,
                     config: RolloutConfig, workers: int = 1) -> float:
    """Mean of EM + passage match over the validation set (so in [0, 2])."""
    candidate = policy.with_options(prompt_set=prompt_set)
    rollouts = run_rollouts(validation, candidate, retriever, config, workers=workers, with_answers=True)
    total = 0.0
    for rollout, example in zip(rollouts, validation):
        total += exact_match(rollout.answer or "", example.gold_answers)
        total += answer_passage_match(rollout.context_documents(), example.gold_answers)
    return total / len(validation)


def bootstrap_prompts(policy: Policy, seed_examples: Sequence[QAExample], retriever: Retriever,
                      config: RolloutConfig, candidate_count: int = 15, keep: int = 4,
                      demos_per_set: int = 3, validation: Optional[Sequence[QAExample]] = None,
                      seed: int = 0, workers: int = 1) -> List[PromptSet]:
    """
    Bootstrap ``keep`` prompt sets from ``candidate_count`` candidates.

    Candidates are ``<base id>-c<i>`` with a seeded random subset of the
    harvested demonstrations. The ``keep`` best by validation score are
    returned, ties broken by candidate index.

    Raises:
        ValueError: No seed trace succeeded, or keep > candidate_count
    """
    if not seed_examples:
        raise ValueError("bootstrapping needs at least one seed example")
    if not 1 <= keep <= candidate_count:
        raise ValueError("keep must satisfy 1 <= keep <= candidate_count")
    validation = list(validation) if validation else list(seed_examples)

    base = policy.prompt_set
    seed_rollouts = run_rollouts(seed_examples, policy, retriever, config, workers=workers, with_answers=True)
    demos = harvest_demos(seed_rollouts, seed_examples)
    if not demos:
        raise ValueError("no seed trace reached a correct answer; try a stronger policy backend or more seed examples")
    logger.info(f"Harvested {len(demos)} demonstrations from {len(seed_examples)} seed examples")

    rng = np.random.default_rng(seed)
    size = min(demos_per_set, len(demos))
    scored: List[Tuple[float, int, PromptSet]] = []
    for i in range(candidate_count):
        picked = sorted(rng.choice(len(demos), size=size, replace=False).tolist())
        candidate = PromptSet(id=f"{base.id}-c{i}", instruction=base.instruction,
                              few_shot_demos=tuple(demos[j] for j in picked))
        score = score_prompt_set(candidate, policy, validation, retriever, config, workers)
        logger.debug(f"Candidate {candidate.id}: score {score:.4f}")
        scored.append((score, i, candidate))

    scored.sort(key=lambda item: (-item[0], item[1]))
    kept = [candidate for _, _, candidate in scored[:keep]]
    logger.info(f"Kept prompt sets: {', '.join(p.id for p in kept)}")
    return kept
