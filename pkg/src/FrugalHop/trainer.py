"""
Desk-scale stopping-policy trainer.

A logistic policy decides after every search operation whether to FINISH.
It is trained with REINFORCE on group-relative advantages of the combined
stopping + format reward, over a synthetic task distribution whose optimal
rollout length h* is known per task.
"""

import json
import math
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import TrainingDivergence
from .reward import RewardConfig, combined_reward, group_advantages, stop_reward

# Configure logger
logger = logging.getLogger(__name__)

FEATURES = ("bias", "hop_fraction", "new_docs_fraction", "query_context_overlap")


class SyntheticStoppingEnv(BaseModel):
    """
    Tasks with a known h*.

    After operation j of a task, the last operation's new-document fraction is
    high while j <= h* and low afterwards; the overlap between the next
    query and the context is low before h* and high from h* on. Both carry
    Gaussian noise clipped to [0, 1]. Recall after j operations is
    min(j, h*) / h*.
    """
    model_config = ConfigDict(frozen=True)

    budget: int = Field(default=6, ge=1)
    h_star_values: Tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    num_tasks: int = Field(default=60, ge=1)
    noise: float = Field(default=0.05, ge=0.0)
    malformed_probability: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def validate_h_star(self):
        if not self.h_star_values:
            raise ValueError("h_star_values must not be empty")
        for h in self.h_star_values:
            if not 1 <= h <= self.budget:
                raise ValueError(f"h* = {h} outside [1, {self.budget}]")
        return self

    def tasks(self) -> List[int]:
        """The task list: one h* per task, drawn with the env seed."""
        rng = np.random.default_rng(self.seed)
        return [int(h) for h in rng.choice(self.h_star_values, size=self.num_tasks)]

    @staticmethod
    def recall(h_term: int, h_star: int) -> float:
        return min(h_term, h_star) / h_star

    def features(self, op_index: int, h_star: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        new_docs = 0.9 if op_index <= h_star else 0.2
        overlap = 0.8 if op_index >= h_star else 0.2
        if rng is not None and self.noise > 0:
            new_docs += rng.normal(0.0, self.noise)
            overlap += rng.normal(0.0, self.noise)
        return np.array([1.0, op_index / self.budget, min(max(new_docs, 0.0), 1.0), min(max(overlap, 0.0), 1.0)])


class StoppingPolicyParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    weights: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    learning_rate: float = Field(default=0.5, gt=0.0)
    seed: int = 0

    @field_validator("weights")
    def validate_weights(cls, v):
        if len(v) != len(FEATURES):
            raise ValueError(f"expected {len(FEATURES)} weights ({', '.join(FEATURES)})")
        if not all(math.isfinite(w) for w in v):
            raise ValueError("weights must be finite")
        return v


def finish_probability(weights: Sequence[float], features: np.ndarray) -> float:
    """Logistic probability of choosing FINISH."""
    z = float(np.dot(np.asarray(weights, dtype=np.float64), features))
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class Episode(BaseModel):
    """One simulated rollout of the stopping policy."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    h_star: int
    h_term: int
    recall: float
    combined: float
    grad_log_prob: np.ndarray


def sample_episode(env: SyntheticStoppingEnv, weights: np.ndarray, h_star: int, cfg: RewardConfig,
                   rng: np.random.Generator, greedy: bool = False) -> Episode:
    """Run the policy on one task; the last operation of the budget is always terminal."""
    grad = np.zeros(len(FEATURES))
    h_term = env.budget
    for op_index in range(1, env.budget):
        x = env.features(op_index, h_star, rng)
        p = finish_probability(weights, x)
        finish = p >= 0.5 if greedy else rng.random() < p
        grad += ((1.0 if finish else 0.0) - p) * x
        if finish:
            h_term = op_index
            break

    outcomes = [rng.random() >= env.malformed_probability for _ in range(h_term)] \
        if env.malformed_probability > 0 else [True] * h_term
    fmt = sum(1.0 if ok else -1.0 for ok in outcomes) / len(outcomes)
    recall = env.recall(h_term, h_star)
    _, stop = stop_reward(h_term, h_star, recall, cfg)
    return Episode(h_star=h_star, h_term=h_term, recall=recall,
                   combined=combined_reward(stop, fmt, cfg), grad_log_prob=grad)


def train_stopping_policy(env: SyntheticStoppingEnv, params: StoppingPolicyParams, cfg: RewardConfig,
                          group_size: int = 8, steps: int = 2000,
                          tasks_per_step: int = 4) -> Tuple[StoppingPolicyParams, List[float]]:
    """
    REINFORCE with group-relative advantages.

    Each step samples ``tasks_per_step`` tasks and ``group_size`` episodes per
    task, normalizes the combined rewards within each group and moves the
    weights along the advantage-weighted score function.

    Returns:
        (trained params, per-step mean |h_term - h*|)

    Raises:
        TrainingDivergence: The weights stopped being finite
    """
    if group_size < 2:
        raise ValueError("group_size v must be >= 2")
    if cfg.budget != env.budget:
        raise ValueError(f"reward budget {cfg.budget} does not match env budget {env.budget}")

    rng = np.random.default_rng(params.seed)
    tasks = env.tasks()
    weights = np.asarray(params.weights, dtype=np.float64)
    curve: List[float] = []

    for step in range(steps):
        grad = np.zeros_like(weights)
        errors = []
        for h_star in rng.choice(tasks, size=tasks_per_step):
            episodes = [sample_episode(env, weights, int(h_star), cfg, rng) for _ in range(group_size)]
            advantages = group_advantages([ep.combined for ep in episodes])
            for episode, advantage in zip(episodes, advantages):
                grad += advantage * episode.grad_log_prob
                errors.append(abs(episode.h_term - episode.h_star))
        weights = weights + params.learning_rate * grad / (tasks_per_step * group_size)
        if not np.all(np.isfinite(weights)):
            raise TrainingDivergence(step)
        curve.append(float(np.mean(errors)))
        if (step + 1) % 100 == 0:
            logger.info(f"step {step + 1}/{steps}: mean |h_term - h*| = {curve[-1]:.3f}")

    trained = params.model_copy(update={"weights": tuple(float(w) for w in weights)})
    return trained, curve


class StoppingEvaluation(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean_searches: float
    mean_recall: float
    mean_abs_error: float
    answerable_rate: float


def evaluate_stopping_policy(env: SyntheticStoppingEnv, params: StoppingPolicyParams, cfg: RewardConfig,
                             greedy: bool = True, episodes_per_task: int = 1,
                             seed: int = 0) -> StoppingEvaluation:
    """Mean searches, recall and stopping error of a policy over every env task."""
    rng = np.random.default_rng(seed)
    weights = np.asarray(params.weights, dtype=np.float64)
    episodes = [
        sample_episode(env, weights, h_star, cfg, rng, greedy=greedy)
        for h_star in env.tasks()
        for _ in range(episodes_per_task)
    ]
    return StoppingEvaluation(
        mean_searches=float(np.mean([ep.h_term for ep in episodes])),
        mean_recall=float(np.mean([ep.recall for ep in episodes])),
        mean_abs_error=float(np.mean([abs(ep.h_term - ep.h_star) for ep in episodes])),
        answerable_rate=float(np.mean([ep.recall >= cfg.tau for ep in episodes])),
    )


def exhaust_budget_baseline(env: SyntheticStoppingEnv, cfg: RewardConfig) -> StoppingEvaluation:
    """The policy that never finishes early."""
    tasks = env.tasks()
    recalls = [env.recall(env.budget, h) for h in tasks]
    return StoppingEvaluation(
        mean_searches=float(env.budget),
        mean_recall=float(np.mean(recalls)),
        mean_abs_error=float(np.mean([env.budget - h for h in tasks])),
        answerable_rate=float(np.mean([r >= cfg.tau for r in recalls])),
    )


def load_env(path: Union[str, Path]) -> SyntheticStoppingEnv:
    """Read an environment description from JSON."""
    return SyntheticStoppingEnv.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
