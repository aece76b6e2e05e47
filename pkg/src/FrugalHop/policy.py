"""
Pluggable step generators.

A PolicySpec names a backend (scripted trace table, seeded stochastic mock or
a remote chat service), the prompt set it is driven with, and whether it may
emit FINISH. Policy turns a spec into something the rollout engine can call.
"""

import json
import zlib
import logging
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

import httpx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import settings
from .domain import Document, QAExample
from .errors import PolicyError
from .prompts import (
    DEFAULT_PROMPT_SET,
    Action,
    HistoryStep,
    PromptSet,
    StepProposal,
    parse_step,
    render_answer_prompt,
    render_react_prompt,
)
from .retrieval import tokenize
from .tools.api import join_url, make_httpx_request

# Configure logger
logger = logging.getLogger(__name__)


class ScriptedBackendSpec(BaseModel):
    """
    Trace table: question id -> raw step texts, one per hop.

    ``prompt_traces`` overrides ``traces`` for a given prompt set id, which is
    how several bootstrapped prompts get distinct scripted candidates.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["scripted"] = "scripted"
    traces: Dict[str, List[str]] = Field(default_factory=dict)
    prompt_traces: Dict[str, Dict[str, List[str]]] = Field(default_factory=dict)
    answers: Dict[str, str] = Field(default_factory=dict)


class StochasticMockBackendSpec(BaseModel):
    """Seeded random policy; finish_probability[h-1] applies at hop h (last value repeats)."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["stochastic_mock"] = "stochastic_mock"
    seed: int = 0
    finish_probability: List[float] = Field(default_factory=lambda: [0.2])
    malformed_probability: float = Field(default=0.0, ge=0.0, le=1.0)
    query_terms: int = Field(default=4, ge=1)

    @field_validator("finish_probability")
    def validate_probabilities(cls, v):
        if not v:
            raise ValueError("finish_probability needs at least one value")
        if any(not 0.0 <= p <= 1.0 for p in v):
            raise ValueError("finish probabilities must lie in [0, 1]")
        return v


class RemoteBackendSpec(BaseModel):
    """Chat-completion style service: POST /v1/step {messages, temperature, max_tokens} -> {text}."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["remote"] = "remote"
    endpoint: Optional[str] = None
    model: str = ""
    temperature: float = Field(default=0.7, ge=0.0)
    max_tokens: int = Field(default=256, ge=1)


BackendSpec = Annotated[
    Union[ScriptedBackendSpec, StochasticMockBackendSpec, RemoteBackendSpec],
    Field(discriminator="kind"),
]


class PolicySpec(BaseModel):
    """Backend, prompts and FINISH permission for a step generator (plus an optional separate answer generator)."""
    model_config = ConfigDict(frozen=True)

    backend: BackendSpec
    prompt_set: PromptSet = DEFAULT_PROMPT_SET
    allow_finish: bool = True
    generator: Optional[BackendSpec] = None


class StepRequest(BaseModel):
    """Everything a backend may look at to produce one step or one answer."""
    model_config = ConfigDict(frozen=True)

    question_id: str
    question: str
    hop_index: int
    prompt: str
    prompt_set_id: str
    context: Tuple[Document, ...] = ()


def _stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


class ScriptedBackend:
    """Replays a trace table; hops past the end of a trace repeat its final step."""

    def __init__(self, spec: ScriptedBackendSpec):
        self.spec = spec

    def generate_step(self, request: StepRequest) -> str:
        table = self.spec.prompt_traces.get(request.prompt_set_id, self.spec.traces)
        trace = table.get(request.question_id)
        if not trace:
            raise ValueError(f"scripted policy has no trace for question '{request.question_id}'"
                             f" (prompt set '{request.prompt_set_id}')")
        return trace[min(request.hop_index, len(trace)) - 1]

    def generate_answer(self, request: StepRequest) -> str:
        if request.question_id not in self.spec.answers:
            raise ValueError(f"scripted generator has no answer for question '{request.question_id}'")
        return self.spec.answers[request.question_id]

    def close(self) -> None:
        pass


class StochasticMockBackend:
    """
    Seeded random step generator.

    Every call draws from its own generator seeded by (seed, question, prompt
    set, hop), so results do not depend on call order or thread scheduling.
    The generated answer echoes the first context title.
    """

    def __init__(self, spec: StochasticMockBackendSpec):
        self.spec = spec

    def _rng(self, request: StepRequest) -> np.random.Generator:
        return np.random.default_rng([
            self.spec.seed,
            _stable_hash(request.question_id),
            _stable_hash(request.prompt_set_id),
            request.hop_index,
        ])

    def _finish_probability(self, hop_index: int) -> float:
        probabilities = self.spec.finish_probability
        return probabilities[min(hop_index, len(probabilities)) - 1]

    def generate_step(self, request: StepRequest) -> str:
        rng = self._rng(request)
        if rng.random() < self.spec.malformed_probability:
            return "I am not sure what to look up next."
        if rng.random() < self._finish_probability(request.hop_index):
            return "Thought: The context should be enough to answer.\nAction: Finish[]"

        terms = tokenize(request.question)
        if request.context:
            doc = request.context[int(rng.integers(len(request.context)))]
            terms += tokenize(doc.title)
        terms = list(dict.fromkeys(terms))
        if not terms:
            query = request.question
        else:
            picked = sorted(rng.choice(len(terms), size=min(self.spec.query_terms, len(terms)), replace=False))
            query = " ".join(terms[i] for i in picked)
        return f"Thought: I still need evidence about {query}.\nAction: Search[{query}]"

    def generate_answer(self, request: StepRequest) -> str:
        return request.context[0].title if request.context else ""

    def close(self) -> None:
        pass


class RemoteBackend:
    """
    Remote chat service client.

    One httpx.Client is shared by all workers; it pools connections and keeps
    no per-call state, so concurrent calls do not interfere.
    """

    def __init__(self, spec: RemoteBackendSpec, client: Optional[httpx.Client] = None):
        endpoint = spec.endpoint or settings.remote_policy_url
        if not endpoint:
            raise ValueError("remote policy needs an endpoint (spec 'endpoint' or REMOTE_POLICY_URL)")
        self.spec = spec
        self.url = join_url(endpoint, "/v1/step")
        self.client = client or httpx.Client()

    def _complete(self, prompt: str) -> str:
        payload = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
        }
        if self.spec.model:
            payload["model"] = self.spec.model
        result = make_httpx_request(self.client, self.url, payload)
        if not result["success"]:
            raise PolicyError(result["error"], status_code=result["status_code"])
        body = result["data"]
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise PolicyError("policy response has no 'text' string")
        return body["text"]

    def generate_step(self, request: StepRequest) -> str:
        return self._complete(request.prompt)

    def generate_answer(self, request: StepRequest) -> str:
        return self._complete(request.prompt)

    def close(self) -> None:
        self.client.close()


def build_backend(spec: BackendSpec):
    """Instantiate the runtime backend for a backend spec."""
    if isinstance(spec, ScriptedBackendSpec):
        return ScriptedBackend(spec)
    if isinstance(spec, StochasticMockBackendSpec):
        return StochasticMockBackend(spec)
    if isinstance(spec, RemoteBackendSpec):
        return RemoteBackend(spec)
    raise ValueError(f"unknown backend spec: {spec!r}")


class Policy:
    """Runtime wrapper around a PolicySpec: renders prompts, calls the backend, parses the reply."""

    def __init__(self, spec: PolicySpec, backend=None, generator=None):
        self.spec = spec
        self.backend = backend if backend is not None else build_backend(spec.backend)
        if generator is not None:
            self.generator = generator
        elif spec.generator is not None:
            self.generator = build_backend(spec.generator)
        else:
            self.generator = self.backend

    @property
    def allow_finish(self) -> bool:
        return self.spec.allow_finish

    @property
    def prompt_set(self) -> PromptSet:
        return self.spec.prompt_set

    def with_options(self, allow_finish: Optional[bool] = None, prompt_set: Optional[PromptSet] = None) -> "Policy":
        """A view of this policy with other settings, sharing the same backends."""
        update = {}
        if allow_finish is not None:
            update["allow_finish"] = allow_finish
        if prompt_set is not None:
            update["prompt_set"] = prompt_set
        return Policy(self.spec.model_copy(update=update), backend=self.backend, generator=self.generator)

    def propose(self, example: QAExample, hop_index: int, history: Sequence[HistoryStep],
                initial_docs: Sequence[Document] = (), context: Sequence[Document] = (),
                prompt_set: Optional[PromptSet] = None) -> StepProposal:
        """
        Produce the next step for a question.

        A policy transport failure becomes a parse_ok = False proposal. In
        exploration mode (allow_finish = False) a FINISH is rewritten into a
        search for the question text.
        """
        prompt_set = prompt_set or self.spec.prompt_set
        prompt = render_react_prompt(example.question, history, prompt_set, initial_docs)
        request = StepRequest(question_id=example.id, question=example.question, hop_index=hop_index,
                              prompt=prompt, prompt_set_id=prompt_set.id, context=tuple(context))
        try:
            raw = self.backend.generate_step(request)
        except PolicyError as e:
            logger.warning(f"Policy call failed for {example.id} hop {hop_index}: {e}")
            return StepProposal(raw_text="", parse_ok=False)

        proposal = parse_step(raw)
        if proposal.is_finish and not self.spec.allow_finish:
            query = " ".join(example.question.split())
            if not query:
                logger.warning(f"Cannot rewrite FINISH for {example.id}: the question is blank")
                return StepProposal(thought=proposal.thought, raw_text=raw, parse_ok=False)
            return StepProposal(thought=proposal.thought, action=Action.SEARCH, search_query=query, raw_text=raw)
        return proposal

    def answer(self, question_id: str, question: str, documents: Sequence[Document]) -> str:
        """Invoke the answer generator once over the accumulated context."""
        request = StepRequest(question_id=question_id, question=question, hop_index=0,
                              prompt=render_answer_prompt(question, documents),
                              prompt_set_id=self.spec.prompt_set.id, context=tuple(documents))
        return self.generator.generate_answer(request)

    def close(self) -> None:
        self.backend.close()
        if self.generator is not self.backend:
            self.generator.close()


def load_policy_spec(path: Union[str, Path]) -> PolicySpec:
    """Read a PolicySpec from JSON."""
    spec = PolicySpec.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    logger.info(f"Loaded {spec.backend.kind} policy spec from {path}")
    return spec
