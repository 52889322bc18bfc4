"""JSONL persistence: one pydantic model per line, written atomically."""
import json
import os
from pathlib import Path
from typing import Any, Iterable, List, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from prefect_judgeforge.exceptions import RecordFileError

M = TypeVar("M", bound=BaseModel)
PathLike = Union[str, Path]

PARTIAL_SUFFIX = ".partial"


def dump_line(record: BaseModel) -> str:
    """One record as a compact JSON line, without unset optional fields."""
    return json.dumps(
        json.loads(record.json(exclude_none=True, by_alias=True)),
        ensure_ascii=False,
    )


def read_jsonl(path: PathLike, model: Type[M]) -> List[M]:
    """
    Reads every non-blank line of a JSONL file as `model`.

    Raises:
        RecordFileError: If a line is not valid JSON or not a valid `model`.
    """
    records = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.parse_obj(json.loads(line)))
            except (json.JSONDecodeError, ValidationError) as exc:
                raise RecordFileError(
                    f"{path}:{number} is not a valid {model.__name__}: {exc}"
                ) from exc
    return records


def write_jsonl(path: PathLike, records: Iterable[BaseModel]) -> Path:
    """Writes records to `path` through a temporary file and an atomic rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    partial = target.with_name(target.name + PARTIAL_SUFFIX)
    with open(partial, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(dump_line(record) + "\n")
    os.replace(partial, target)
    return target


def append_jsonl(path: PathLike, records: Iterable[BaseModel]) -> None:
    """Appends records to `path`, flushing after every line."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "a", encoding="utf-8") as handle:
        for record in records:
            handle.write(dump_line(record) + "\n")
            handle.flush()


def write_json(path: PathLike, data: Any) -> Path:
    """Writes a JSON document atomically, keys in insertion order."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    partial = target.with_name(target.name + PARTIAL_SUFFIX)
    partial.write_text(
        json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    os.replace(partial, target)
    return target


def read_json(path: PathLike) -> Any:
    """Reads a JSON document.

    Raises:
        RecordFileError: If the file is not valid JSON.
    """
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RecordFileError(f"{path} is not valid JSON: {exc}") from exc
