"""
Core domain types, text normalization and JSONL ingestion.

Everything here is immutable once built and safe to share between workers.
"""

import re
import json
import string
import logging
from pathlib import Path
from typing import FrozenSet, Iterator, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import DatasetError

# Configure logger
logger = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop articles and collapse whitespace."""
    s = s.lower().translate(_PUNCT_TABLE)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def normalize_title(s: str) -> str:
    """Case-fold and collapse whitespace; titles are identifiers, so nothing else."""
    return " ".join(s.lower().split())


class Evidence(BaseModel):
    """One gold supporting sentence and the title of the article it comes from."""
    model_config = ConfigDict(frozen=True)

    title: str
    sentence: str


class QAExample(BaseModel):
    """A benchmark question with its gold answers, titles and evidence."""
    model_config = ConfigDict(frozen=True)

    id: str
    question: str
    gold_answers: Tuple[str, ...] = Field(min_length=1)
    gold_titles: FrozenSet[str] = frozenset()
    gold_evidence: Tuple[Evidence, ...] = ()
    hop_count: Optional[int] = Field(default=None, ge=1)

    @field_validator("gold_answers")
    def validate_answers(cls, v):
        if not any(a.strip() for a in v):
            raise ValueError("gold_answers must contain a non-empty answer")
        return v


class Document(BaseModel):
    """A retrievable passage."""
    model_config = ConfigDict(frozen=True)

    doc_id: str
    title: str = Field(min_length=1)
    text: str

    @field_validator("title")
    def validate_title(cls, v):
        if not v.strip():
            raise ValueError("title must be non-empty")
        return v


class Dataset(BaseModel):
    """An ordered collection of examples with unique ids."""
    model_config = ConfigDict(frozen=True)

    examples: Tuple[QAExample, ...]
    split_name: str = "default"

    @model_validator(mode="after")
    def validate_unique_ids(self):
        seen = set()
        for example in self.examples:
            if example.id in seen:
                raise ValueError(f"duplicate example id: {example.id}")
            seen.add(example.id)
        return self

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[QAExample]:
        return iter(self.examples)

    def by_id(self) -> dict:
        return {example.id: example for example in self.examples}


def _iter_json_lines(path: Path) -> Iterator[Tuple[int, dict]]:
    """Yield (line number, parsed object) for each non-blank line."""
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"invalid JSON: {e.msg}", line_number) from e
            if not isinstance(obj, dict):
                raise DatasetError("expected a JSON object", line_number)
            yield line_number, obj


def _example_from_record(obj: dict, line_number: int) -> QAExample:
    for field in ("id", "question", "answers"):
        if field not in obj:
            raise DatasetError(f"missing field '{field}'", line_number)
    try:
        return QAExample(
            id=str(obj["id"]),
            question=obj["question"],
            gold_answers=tuple(obj["answers"]),
            gold_titles=obj.get("gold_titles", []),
            gold_evidence=tuple(Evidence(**ev) for ev in obj.get("evidence", [])),
            hop_count=obj.get("hops"),
        )
    except (ValidationError, TypeError) as e:
        raise DatasetError(f"schema error: {e}", line_number) from e


def load_dataset(path: Union[str, Path], limit: Optional[int] = None,
                 split_name: Optional[str] = None) -> Dataset:
    """
    Load a dataset JSONL file.

    Args:
        path: File with one {"id", "question", "answers", "gold_titles",
            "evidence", "hops"?} object per line
        limit: Keep only the first ``limit`` examples in file order

    Returns:
        The loaded Dataset

    Raises:
        DatasetError: A line is malformed; the message names the line
    """
    path = Path(path)
    examples: List[QAExample] = []
    seen = set()
    for line_number, obj in _iter_json_lines(path):
        if limit is not None and len(examples) >= limit:
            break
        example = _example_from_record(obj, line_number)
        if example.id in seen:
            raise DatasetError(f"duplicate id '{example.id}'", line_number)
        seen.add(example.id)
        examples.append(example)
    logger.info(f"Loaded {len(examples)} examples from {path}")
    return Dataset(examples=tuple(examples), split_name=split_name or path.stem)


def load_corpus(path: Union[str, Path]) -> List[Document]:
    """Load a corpus JSONL file of {"doc_id", "title", "text"} objects."""
    path = Path(path)
    documents: List[Document] = []
    for line_number, obj in _iter_json_lines(path):
        try:
            documents.append(Document(doc_id=str(obj["doc_id"]), title=obj["title"], text=obj.get("text", "")))
        except KeyError as e:
            raise DatasetError(f"missing field {e}", line_number) from e
        except ValidationError as e:
            raise DatasetError(f"schema error: {e}", line_number) from e
    logger.info(f"Loaded {len(documents)} documents from {path}")
    return documents


def example_to_record(example: QAExample) -> dict:
    """Serialize an example back to the dataset JSONL schema."""
    record = {
        "id": example.id,
        "question": example.question,
        "answers": list(example.gold_answers),
        "gold_titles": sorted(example.gold_titles),
        "evidence": [{"title": ev.title, "sentence": ev.sentence} for ev in example.gold_evidence],
    }
    if example.hop_count is not None:
        record["hops"] = example.hop_count
    return record
