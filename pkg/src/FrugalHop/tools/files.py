"""
File handling helpers: JSONL and CSV outputs plus run manifests.
"""

import csv
import json
import sys
import logging
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy
import pydantic

from .. import __version__

PathLike = Union[str, Path]

# Configure logger
logger = logging.getLogger(__name__)


def ensure_parent(path: PathLike) -> Path:
    """Create the parent directory of an output path if needed."""
    path = Path(path).expanduser()
    if not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        logger.info(f"Created output directory: {path.parent}")
    return path


def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> int:
    """
    Write one JSON object per line.

    Keys keep their insertion order so repeated runs produce identical bytes.

    Returns:
        Number of lines written
    """
    path = ensure_parent(path)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")
            count += 1
    return count


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    """Read every non-blank line of a JSONL file."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


def write_json(path: PathLike, payload: Mapping[str, Any]) -> Path:
    path = ensure_parent(path)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write a CSV file with a header row; returns the number of data rows."""
    path = ensure_parent(path)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    return count


def _package_versions() -> Dict[str, str]:
    return {
        "frugalhop": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "pydantic": pydantic.VERSION,
    }


def manifest_path(output_path: PathLike) -> Path:
    output_path = Path(output_path)
    return output_path.with_name(output_path.name + ".manifest.json")


def write_manifest(output_path: PathLike, command: str, config: Mapping[str, Any],
                   inputs: Optional[Mapping[str, Any]] = None, argv: Optional[Sequence[str]] = None) -> Path:
    """
    Write ``<output>.manifest.json`` next to an output file.

    The manifest holds everything needed to re-run the command: the command
    name, the full merged configuration, the seed, input paths and the
    package versions in use.
    """
    payload = {
        "command": command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "output": str(output_path),
        "seed": config.get("seed"),
        "config": dict(config),
        "inputs": {key: str(value) for key, value in (inputs or {}).items() if value is not None},
        "versions": _package_versions(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = write_json(manifest_path(output_path), payload)
    logger.info(f"Wrote run manifest: {path}")
    return path
