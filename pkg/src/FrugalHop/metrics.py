"""
Answer, retrieval and efficiency metrics.

Scores are kept as fractions in [0, 1]; reports multiply by 100. The
tradeoff scores divide the summed fractions by the mean number of searches.
"""

import logging
from collections import Counter
from typing import TYPE_CHECKING, AbstractSet, Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .domain import Dataset, Document, Evidence, QAExample, normalize_answer, normalize_title

if TYPE_CHECKING:
    from .rollout import Rollout

# Configure logger
logger = logging.getLogger(__name__)


def token_f1(prediction: str, reference: str) -> float:
    """Word-level F1 = 2TP / (2TP + FP + FN) over normalized token multisets."""
    pred_tokens = normalize_answer(prediction).split()
    ref_tokens = normalize_answer(reference).split()
    if not pred_tokens or not ref_tokens:
        return float(pred_tokens == ref_tokens)
    tp = sum((Counter(pred_tokens) & Counter(ref_tokens)).values())
    if tp == 0:
        return 0.0
    fp = len(pred_tokens) - tp
    fn = len(ref_tokens) - tp
    return 2 * tp / (2 * tp + fp + fn)


def _require_golds(golds: Sequence[str]) -> None:
    if not golds:
        raise ValueError("at least one gold answer is required")


def answer_f1(prediction: str, golds: Sequence[str]) -> float:
    """Maximum token F1 of the prediction over the gold answers."""
    _require_golds(golds)
    return max(token_f1(prediction, gold) for gold in golds)


def exact_match(prediction: str, golds: Sequence[str]) -> float:
    """1.0 if the normalized prediction equals any normalized gold answer."""
    _require_golds(golds)
    pred = normalize_answer(prediction)
    return float(any(pred == normalize_answer(gold) for gold in golds))


def match_score(prediction: str, golds: Sequence[str]) -> float:
    """1.0 if any normalized gold answer occurs inside the normalized prediction."""
    _require_golds(golds)
    pred = normalize_answer(prediction)
    return float(any(normalize_answer(gold) in pred for gold in golds))


def answer_passage_match(documents: Iterable[Document], golds: Sequence[str]) -> float:
    """1.0 if any normalized gold answer occurs inside any retrieved passage."""
    _require_golds(golds)
    normalized_golds = [normalize_answer(gold) for gold in golds]
    for doc in documents:
        text = normalize_answer(doc.text)
        if any(gold and gold in text for gold in normalized_golds):
            return 1.0
    return 0.0


def doc_recall(context_titles: Iterable[str], gold_titles: AbstractSet[str]) -> float:
    """Fraction of gold titles present in the context, compared after normalize_title."""
    gold = {normalize_title(t) for t in gold_titles}
    if not gold:
        raise ValueError("doc_recall needs at least one gold title")
    context = {normalize_title(t) for t in context_titles}
    return len(context & gold) / len(gold)


def support_f1(context_docs: Sequence[Document], gold_evidence: Sequence[Evidence]) -> float:
    """Mean over evidence sentences of the best token F1 against any retrieved document."""
    if not gold_evidence:
        raise ValueError("support_f1 needs at least one evidence sentence")
    if not context_docs:
        return 0.0
    best = [max(token_f1(ev.sentence, doc.text) for doc in context_docs) for ev in gold_evidence]
    return sum(best) / len(best)


class AnswerScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    f1: float = Field(ge=0.0, le=1.0)
    em: float
    match: float

    @model_validator(mode="after")
    def validate_consistency(self):
        if self.em == 1.0 and not (self.f1 == 1.0 and self.match == 1.0):
            raise ValueError("exact match implies F1 = 1 and Match = 1")
        return self


class RetrievalScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    recall: Optional[float] = None
    support_f1: Optional[float] = None
    searches: int = Field(ge=0)


class ExampleScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    example_id: str
    answer: AnswerScores
    retrieval: RetrievalScores


def score_answer(prediction: Optional[str], golds: Sequence[str]) -> AnswerScores:
    prediction = prediction or ""
    return AnswerScores(
        f1=answer_f1(prediction, golds),
        em=exact_match(prediction, golds),
        match=match_score(prediction, golds),
    )


def score_example(rollout: "Rollout", example: QAExample) -> ExampleScores:
    """Score one rollout against its gold example."""
    documents = rollout.context_documents()
    recall = doc_recall((d.title for d in documents), example.gold_titles) if example.gold_titles else None
    sup = support_f1(documents, example.gold_evidence) if example.gold_evidence else None
    return ExampleScores(
        example_id=rollout.example_id,
        answer=score_answer(rollout.answer, example.gold_answers),
        retrieval=RetrievalScores(recall=recall, support_f1=sup, searches=rollout.h_term),
    )


def tradeoff_scores(f1: float, em: float, match: float, recall: float, support: float,
                    searches: float) -> Tuple[float, float]:
    """
    Efficiency tradeoffs from fractional metrics and the mean search count.

    Returns:
        (100 * (F1 + EM + Match) / (3 * searches),
         100 * (Recall + SupF1) / (2 * searches))
    """
    if searches <= 0:
        raise ValueError("tradeoff metrics need a positive mean number of searches")
    return (
        100.0 * (f1 + em + match) / (3.0 * searches),
        100.0 * (recall + support) / (2.0 * searches),
    )


def _mean(values: Iterable[Optional[float]]) -> float:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else 0.0


class RunReport(BaseModel):
    """Per-example scores and their means (fractions; see to_report for the x100 view)."""
    model_config = ConfigDict(frozen=True)

    examples: Tuple[ExampleScores, ...]
    f1: float
    em: float
    match: float
    recall: float
    support_f1: float
    searches: float
    tradeoff_answer: Optional[float] = None
    tradeoff_retrieval: Optional[float] = None

    @property
    def n(self) -> int:
        return len(self.examples)

    def to_report(self) -> Dict[str, Optional[float]]:
        """The report.json payload: metrics x100, searches and tradeoffs as is."""
        def pct(value: float) -> float:
            return round(100.0 * value, 6)

        return {
            "n": self.n,
            "f1": pct(self.f1),
            "em": pct(self.em),
            "match": pct(self.match),
            "recall": pct(self.recall),
            "support_f1": pct(self.support_f1),
            "searches": round(self.searches, 6),
            "tradeoff_answer": None if self.tradeoff_answer is None else round(self.tradeoff_answer, 6),
            "tradeoff_retrieval": None if self.tradeoff_retrieval is None else round(self.tradeoff_retrieval, 6),
        }

    def csv_rows(self) -> List[list]:
        return [
            [s.example_id, s.answer.f1, s.answer.em, s.answer.match,
             s.retrieval.recall, s.retrieval.support_f1, s.retrieval.searches]
            for s in self.examples
        ]


CSV_HEADER = ["example_id", "f1", "em", "match", "recall", "support_f1", "searches"]


def tradeoff_metrics(report: RunReport) -> Tuple[float, float]:
    """(tradeoff_answer, tradeoff_retrieval) for a run."""
    return tradeoff_scores(report.f1, report.em, report.match, report.recall, report.support_f1, report.searches)


def aggregate(scores: Sequence[ExampleScores]) -> RunReport:
    """Average per-example scores into a RunReport."""
    report = RunReport(
        examples=tuple(scores),
        f1=_mean(s.answer.f1 for s in scores),
        em=_mean(s.answer.em for s in scores),
        match=_mean(s.answer.match for s in scores),
        recall=_mean(s.retrieval.recall for s in scores),
        support_f1=_mean(s.retrieval.support_f1 for s in scores),
        searches=_mean(float(s.retrieval.searches) for s in scores),
    )
    if report.searches <= 0:
        logger.warning("Mean search count is zero; tradeoff metrics left undefined")
        return report
    answer, retrieval = tradeoff_metrics(report)
    return report.model_copy(update={"tradeoff_answer": answer, "tradeoff_retrieval": retrieval})


def evaluate_run(rollouts: Sequence["Rollout"], dataset: Dataset) -> RunReport:
    """
    Score every rollout against the dataset and aggregate.

    Raises:
        ValueError: A rollout's example_id is not in the dataset
    """
    examples = dataset.by_id()
    scores = []
    for rollout in rollouts:
        example = examples.get(rollout.example_id)
        if example is None:
            raise ValueError(f"rollout example_id '{rollout.example_id}' not found in dataset")
        scores.append(score_example(rollout, example))
    report = aggregate(scores)
    logger.info(f"Evaluated {report.n} rollouts: recall {report.recall:.4f}, "
                f"F1 {report.f1:.4f}, mean searches {report.searches:.2f}")
    return report
