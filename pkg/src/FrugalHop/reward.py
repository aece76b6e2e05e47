"""
Stopping reward, format reward and group-relative advantages.

The stopping reward compares the hop a rollout terminated at with the
optimal rollout length h*, the first search operation after which recall no
longer improves (or reaches a reference policy's final recall).
"""

import math
import logging
from collections import Counter
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .metrics import doc_recall
from .rollout import Rollout, recall_trajectory

# Configure logger
logger = logging.getLogger(__name__)


class RewardCase(str, Enum):
    LATE = "LATE"
    PERFECT = "PERFECT"
    EARLY = "EARLY"


class RewardConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    r_max: float = Field(default=2.0, gt=0.0)
    alpha: float = Field(default=1.0, ge=0.0)
    tau: float = Field(default=1.0, ge=0.0, le=1.0)
    budget: int = Field(default=6, ge=1)

    @property
    def band(self) -> Tuple[float, float]:
        """The documented range of the combined reward."""
        return -self.r_max - 1.0, self.r_max + self.alpha + 1.0


class RewardBreakdown(BaseModel):
    """How one rollout's reward was put together."""
    model_config = ConfigDict(frozen=True)

    case: RewardCase
    delta: float
    stop_reward: float
    format_reward: float = Field(ge=-1.0, le=1.0)
    combined: float
    h_term: int
    h_star: int
    recall: float

    @model_validator(mode="after")
    def validate_combined(self):
        if abs(self.combined - (self.stop_reward + self.format_reward) / 2.0) > 1e-12:
            raise ValueError("combined must be the mean of stop and format rewards")
        return self


def compute_h_star(trajectory: Sequence[float], reference_final: Optional[float] = None,
                   budget: Optional[int] = None) -> int:
    """
    Optimal rollout length for a recall trajectory.

    Args:
        trajectory: Recall after each search operation; non-decreasing
        reference_final: Final recall of a reference policy. When given, h* is
            the first operation reaching it, or the budget if none does
        budget: B; defaults to the trajectory length

    Returns:
        1-based h*
    """
    if not trajectory:
        raise ValueError("trajectory must be non-empty")
    budget = budget if budget is not None else len(trajectory)
    if len(trajectory) > budget:
        raise ValueError(f"trajectory has {len(trajectory)} operations, more than budget {budget}")
    for prev, cur in zip(trajectory, trajectory[1:]):
        if cur < prev:
            raise ValueError("recall trajectory must be non-decreasing")

    target = trajectory[-1] if reference_final is None else reference_final
    for h, value in enumerate(trajectory, start=1):
        if value >= target:
            return h
    return budget


def _clamp(value: float, low: float, high: float) -> float:
    return max(low, min(high, value))


def stop_reward(h_term: int, h_star: int, recall: float, cfg: RewardConfig) -> Tuple[RewardCase, float]:
    """
    Reward for where a rollout stopped.

    LATE (answerable, overshoot): clamp(ln((1 - D) / D), -r_max, r_max)
    PERFECT (answerable, D = 0):  r_max + alpha * h* / B
    EARLY (not answerable, or undershoot): clamp(ln((1 - |D|) / |D|), -r_max, 0), 0 at D = 0
    with D = (h_term - h*) / B.
    """
    budget = cfg.budget
    if not 1 <= h_term <= budget:
        raise ValueError(f"h_term={h_term} outside [1, {budget}]")
    if not 1 <= h_star <= budget:
        raise ValueError(f"h_star={h_star} outside [1, {budget}]")
    if not 0.0 <= recall <= 1.0:
        raise ValueError(f"recall={recall} outside [0, 1]")

    delta = (h_term - h_star) / budget
    if recall >= cfg.tau and delta > 0:
        return RewardCase.LATE, _clamp(math.log((1.0 - delta) / delta), -cfg.r_max, cfg.r_max)
    if recall >= cfg.tau and delta == 0:
        return RewardCase.PERFECT, cfg.r_max + cfg.alpha * (h_star / budget)
    magnitude = abs(delta)
    if magnitude == 0:
        return RewardCase.EARLY, 0.0
    return RewardCase.EARLY, _clamp(math.log((1.0 - magnitude) / magnitude), -cfg.r_max, 0.0)


def format_reward(rollout: Rollout) -> float:
    """
    Mean over hops of +1 for a well-formed hop that retrieved (or finished), -1 otherwise.

    A successful D_0 is not a policy output and is left out. A failed D_0
    that counts toward B adds one -1 step.
    """
    outcomes = [1.0 if hop.succeeded else -1.0 for hop in rollout.hops]
    if rollout.initial_counted and not rollout.initial_retrieval_ok:
        outcomes.append(-1.0)
    if not outcomes:
        return 0.0
    return sum(outcomes) / len(outcomes)


def combined_reward(stop: float, fmt: float, cfg: Optional[RewardConfig] = None) -> float:
    """Mean of the stopping and format rewards, checked against the reward band when cfg is given."""
    if not -1.0 <= fmt <= 1.0:
        raise ValueError(f"format reward {fmt} outside [-1, 1]")
    combined = (stop + fmt) / 2.0
    if cfg is not None:
        low, high = cfg.band
        if not low <= combined <= high:
            raise ValueError(f"combined reward {combined} outside [{low}, {high}]")
    return combined


def score_rollout(rollout: Rollout, gold_titles: Iterable[str], cfg: RewardConfig,
                  reference_final: Optional[float] = None) -> RewardBreakdown:
    """
    Full reward breakdown for one rollout.

    A rollout with no counted search operation is scored as one operation
    whose recall is that of its whole context.
    """
    gold = frozenset(gold_titles)
    trajectory = recall_trajectory(rollout, gold)
    if not trajectory:
        trajectory = [doc_recall((d.title for d in rollout.context_documents()), gold)]
    h_term = max(1, rollout.h_term)
    h_star = compute_h_star(trajectory, reference_final, cfg.budget)
    recall = trajectory[-1]
    case, stop = stop_reward(h_term, h_star, recall, cfg)
    fmt = format_reward(rollout)
    return RewardBreakdown(
        case=case,
        delta=(h_term - h_star) / cfg.budget,
        stop_reward=stop,
        format_reward=fmt,
        combined=combined_reward(stop, fmt, cfg),
        h_term=h_term,
        h_star=h_star,
        recall=recall,
    )


def group_advantages(rewards: Sequence[float], epsilon: float = 1e-8) -> List[float]:
    """
    Group-relative advantages: (r - mean) / (population std + epsilon).

    A group whose rewards are all equal gets all-zero advantages.
    """
    values = np.asarray(rewards, dtype=np.float64)
    if values.size < 2:
        raise ValueError("a group needs at least two rewards")
    if np.all(values == values[0]):
        return [0.0] * int(values.size)
    centered = values - values.mean()
    return (centered / (values.std() + epsilon)).tolist()


class GrpoGroup(BaseModel):
    """v sampled rollouts for one question with their rewards and advantages."""
    model_config = ConfigDict(frozen=True)

    samples: Tuple[Tuple[Rollout, RewardBreakdown], ...]
    advantages: Tuple[float, ...]

    @property
    def group_size(self) -> int:
        return len(self.samples)

    @model_validator(mode="after")
    def validate_advantages(self):
        if len(self.samples) != len(self.advantages):
            raise ValueError("one advantage per sample is required")
        if self.advantages and abs(sum(self.advantages) / len(self.advantages)) > 1e-9:
            raise ValueError("advantages must have zero mean")
        return self


def build_grpo_group(rollouts: Sequence[Rollout], gold_titles: Iterable[str], cfg: RewardConfig,
                     reference_final: Optional[float] = None) -> GrpoGroup:
    """Score a group of rollouts for the same question and normalize their rewards."""
    gold = frozenset(gold_titles)
    breakdowns = [score_rollout(r, gold, cfg, reference_final) for r in rollouts]
    advantages = group_advantages([b.combined for b in breakdowns])
    return GrpoGroup(samples=tuple(zip(rollouts, breakdowns)), advantages=tuple(advantages))


def h_star_histogram(h_stars: Iterable[int], budget: int) -> List[Tuple[int, int]]:
    """Frequency of each optimal search count 1..B."""
    counts = Counter(h_stars)
    return [(h, counts.get(h, 0)) for h in range(1, budget + 1)]


def reference_recalls(rollouts: Iterable[Rollout], gold_by_id: dict) -> dict:
    """Final context recall of each reference rollout, keyed by example_id."""
    finals = {}
    for rollout in rollouts:
        gold = gold_by_id.get(rollout.example_id)
        if gold:
            finals[rollout.example_id] = doc_recall((d.title for d in rollout.context_documents()), gold)
    return finals
