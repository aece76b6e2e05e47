"""
Prompt templates and the ReAct text format.

Rendering and parsing live side by side so that a step serialized by
serialize_step is always recovered by parse_step.
"""

import re
import json
import logging
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .domain import Document
from .tools.files import ensure_parent

# Configure logger
logger = logging.getLogger(__name__)

DEFAULT_INSTRUCTION = """\
Answer the question by searching a document collection step by step.
At each step write a Thought explaining what is still missing, then one Action:
  Search[<query>]  to retrieve more documents, or
  Finish[]         once the context holds everything needed to answer.
Retrieved documents appear as Observations. Do not repeat earlier searches."""

ANSWER_INSTRUCTION = """\
Answer the question using only the context documents.
Reply with the shortest span that answers the question, without explanation."""

NO_NEW_DOCUMENTS = "(no new documents)"

_THOUGHT = re.compile(r"Thought:", re.IGNORECASE)
_ACTION = re.compile(r"Action:\s*(Search|Finish)\[([^\]\n]*)\]", re.IGNORECASE)


class Action(str, Enum):
    SEARCH = "SEARCH"
    FINISH = "FINISH"


class StepProposal(BaseModel):
    """One parsed (thought, action, search query) triplet."""
    model_config = ConfigDict(frozen=True)

    thought: str = ""
    action: Action = Action.SEARCH
    search_query: Optional[str] = None
    raw_text: str = ""
    parse_ok: bool = True

    @model_validator(mode="after")
    def validate_action(self):
        if self.action is Action.FINISH and self.search_query is not None:
            raise ValueError("a FINISH step carries no search query")
        if self.parse_ok and self.action is Action.SEARCH and not (self.search_query or "").strip():
            raise ValueError("a well-formed SEARCH step needs a non-empty query")
        return self

    @property
    def is_finish(self) -> bool:
        return self.parse_ok and self.action is Action.FINISH


class HistoryStep(BaseModel):
    """A completed hop as it appears in the prompt: thought, action and what came back."""
    model_config = ConfigDict(frozen=True)

    thought: str
    action: Action
    search_query: Optional[str] = None
    documents: Tuple[Document, ...] = ()


class PromptSet(BaseModel):
    """An instruction plus few-shot demonstrations."""
    id: str
    instruction: str = DEFAULT_INSTRUCTION
    few_shot_demos: Tuple[str, ...] = Field(default=(), alias="demos")

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    def to_record(self) -> dict:
        return {"id": self.id, "instruction": self.instruction, "demos": list(self.few_shot_demos)}


DEFAULT_PROMPT_SET = PromptSet(id="default")


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _clean_query(query: str) -> str:
    return _one_line(query.replace("[", " ").replace("]", " "))


def render_action(action: Action, search_query: Optional[str]) -> str:
    if action is Action.FINISH:
        return "Action: Finish[]"
    return f"Action: Search[{_clean_query(search_query or '')}]"


def render_observation(documents: Sequence[Document]) -> str:
    if not documents:
        return f"Observation: {NO_NEW_DOCUMENTS}"
    lines = ["Observation:"]
    for i, doc in enumerate(documents, start=1):
        lines.append(f"[{i}] {_one_line(doc.title)}: {_one_line(doc.text)}")
    return "\n".join(lines)


def serialize_step(proposal: StepProposal) -> str:
    """The two-line target text of a step: Thought then Action."""
    return f"Thought: {_one_line(proposal.thought)}\n{render_action(proposal.action, proposal.search_query)}"


def _render_trace(question: str, initial_docs: Sequence[Document], history: Sequence[HistoryStep]) -> List[str]:
    lines = [f"Question: {_one_line(question)}"]
    if initial_docs:
        lines.append(render_observation(initial_docs))
    for step in history:
        lines.append(f"Thought: {_one_line(step.thought)}")
        lines.append(render_action(step.action, step.search_query))
        if step.action is Action.SEARCH:
            lines.append(render_observation(step.documents))
    return lines


def render_demo(question: str, initial_docs: Sequence[Document], history: Sequence[HistoryStep],
                answer: str) -> str:
    """Serialize a finished trace as a few-shot demonstration."""
    return "\n".join(_render_trace(question, initial_docs, history) + [f"Answer: {_one_line(answer)}"])


def render_react_prompt(question: str, history: Sequence[HistoryStep], prompt_set: PromptSet,
                        initial_docs: Sequence[Document] = ()) -> str:
    """
    Render the full ReAct context for the next step.

    Args:
        question: The user question
        history: Completed hops in order
        prompt_set: Instruction and demonstrations to prepend
        initial_docs: Documents retrieved for the question itself, if any

    Returns:
        Deterministic prompt text ending with a "Thought:" cue
    """
    blocks = [prompt_set.instruction.strip()]
    blocks.extend(demo.strip() for demo in prompt_set.few_shot_demos)
    blocks.append("\n".join(_render_trace(question, initial_docs, history) + ["Thought:"]))
    return "\n\n".join(blocks)


def render_answer_prompt(question: str, documents: Sequence[Document]) -> str:
    """Prompt for the answer generator: question plus the full accumulated context."""
    lines = [ANSWER_INSTRUCTION, "", "Context:"]
    if documents:
        for i, doc in enumerate(documents, start=1):
            lines.append(f"[{i}] {_one_line(doc.title)}: {_one_line(doc.text)}")
    else:
        lines.append(NO_NEW_DOCUMENTS)
    lines += ["", f"Question: {_one_line(question)}", "Answer:"]
    return "\n".join(lines)


def parse_step(raw: str) -> StepProposal:
    """
    Extract the first Thought and the first well-formed Action from model output.

    Trailing text after the action is ignored. Anything else (no action, no
    thought before it, an empty Search[]) yields parse_ok = False.
    """
    action_match = _ACTION.search(raw)
    thought_match = _THOUGHT.search(raw)
    if action_match is None or thought_match is None or thought_match.start() > action_match.start():
        return StepProposal(raw_text=raw, parse_ok=False)

    thought = _one_line(raw[thought_match.end():action_match.start()])
    verb, argument = action_match.group(1).lower(), action_match.group(2)
    if verb == "finish":
        return StepProposal(thought=thought, action=Action.FINISH, raw_text=raw)
    query = _one_line(argument)
    if not query:
        return StepProposal(thought=thought, raw_text=raw, parse_ok=False)
    return StepProposal(thought=thought, action=Action.SEARCH, search_query=query, raw_text=raw)


def load_prompt_sets(path: Union[str, Path]) -> List[PromptSet]:
    """Read prompt sets from a JSON file holding one object or a list of them."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    items = payload if isinstance(payload, list) else [payload]
    prompt_sets = [PromptSet(**item) for item in items]
    logger.info(f"Loaded {len(prompt_sets)} prompt sets from {path}")
    return prompt_sets


def save_prompt_sets(prompt_sets: Sequence[PromptSet], path: Union[str, Path]) -> Path:
    path = ensure_parent(path)
    path.write_text(json.dumps([p.to_record() for p in prompt_sets], indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    return path
