"""JSONL datasets: examples, predictions, candidates, synthesized points and preference pairs."""

from __future__ import annotations

import json
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from .errors import DatasetParseError, DuplicateIdError, MissingFieldError

HardnessTarget = Literal["easy", "medium", "hard"]
HARDNESS_TARGETS: tuple[str, ...] = ("easy", "medium", "hard")
ChosenSource = Literal["weak_model", "gold"]
INCOMPLETE_SUFFIX = ".incomplete"


@dataclass(frozen=True)
class Example:
    id: int
    db_id: str
    question: str
    gold_sql: str
    knowledge: str | None = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("example id must be non-negative")
        if not self.question.strip():
            raise ValueError(f"example {self.id}: empty question")
        if not self.gold_sql.strip():
            raise ValueError(f"example {self.id}: empty gold SQL")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"id": self.id, "db_id": self.db_id, "question": self.question, "query": self.gold_sql}
        if self.knowledge is not None:
            rec["evidence"] = self.knowledge
        return rec


@dataclass(frozen=True)
class Prediction:
    example_id: int
    sql: str

    def to_record(self) -> dict[str, Any]:
        return {"example_id": self.example_id, "sql": self.sql}


@dataclass(frozen=True)
class Candidate:
    """A weak-model generation for one example."""

    example_id: int
    sql: str
    source_model: str = "weak"

    def __post_init__(self) -> None:
        if not self.sql.strip():
            raise ValueError(f"candidate for example {self.example_id}: empty SQL")

    def to_record(self) -> dict[str, Any]:
        return {"example_id": self.example_id, "sql": self.sql, "source_model": self.source_model}


@dataclass(frozen=True)
class SynthDataPoint:
    domain: str
    ddl: str
    question: str
    answer_sql: str
    level: str

    def __post_init__(self) -> None:
        if self.level not in HARDNESS_TARGETS:
            raise ValueError(f"level must be one of {HARDNESS_TARGETS}, got {self.level!r}")
        for name in ("domain", "ddl", "question", "answer_sql"):
            if not getattr(self, name).strip():
                raise ValueError(f"synthesized data point has empty {name}")

    def to_record(self) -> dict[str, Any]:
        return {
            "domain": self.domain,
            "schema_ddl": self.ddl,
            "question": self.question,
            "answer": self.answer_sql,
            "level": self.level,
        }


@dataclass(frozen=True)
class PreferencePair:
    example_id: int
    prompt: str
    chosen: str
    rejected: str
    chosen_source: str = "weak_model"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise ValueError(f"preference pair for example {self.example_id}: chosen == rejected")
        if self.chosen_source not in ("weak_model", "gold"):
            raise ValueError(f"chosen_source must be weak_model or gold, got {self.chosen_source!r}")

    def to_record(self) -> dict[str, Any]:
        meta = {"example_id": self.example_id, "chosen_source": self.chosen_source}
        meta.update(self.meta)
        return {"prompt": self.prompt, "chosen": self.chosen, "rejected": self.rejected, "meta": meta}


@dataclass(frozen=True)
class StrongDataset:
    """Human-annotated examples plus synthesized points (D_s)."""

    human: tuple[Example, ...] = ()
    synthetic: tuple[SynthDataPoint, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "human", tuple(self.human))
        object.__setattr__(self, "synthetic", tuple(self.synthetic))
        ids = [e.id for e in self.human]
        if len(ids) != len(set(ids)):
            raise ValueError("strong dataset: duplicate example ids")

    def __len__(self) -> int:
        return len(self.human) + len(self.synthetic)

    def provenance(self) -> list[str]:
        return ["human"] * len(self.human) + ["synthetic"] * len(self.synthetic)


def iter_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(rec, dict):
                raise DatasetParseError(str(path), lineno, "record is not a JSON object")
            yield lineno, rec


def _require(rec: dict[str, Any], key: str, path: str | Path, lineno: int) -> Any:
    if key not in rec or rec[key] is None:
        raise MissingFieldError(str(path), lineno, key)
    return rec[key]


def _build(path: str | Path, lineno: int, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise DatasetParseError(str(path), lineno, str(exc)) from exc


def read_examples(path: str | Path) -> list[Example]:
    """Read Spider/BIRD-style examples; ids default to the 0-based line index."""
    out: list[Example] = []
    seen: set[int] = set()
    for lineno, rec in iter_records(path):
        db_id = _require(rec, "db_id", path, lineno)
        question = _require(rec, "question", path, lineno)
        query = _require(rec, "query", path, lineno)
        ex_id = rec.get("id", lineno - 1)
        if not isinstance(ex_id, int) or isinstance(ex_id, bool):
            raise DatasetParseError(str(path), lineno, f"id must be an integer, got {ex_id!r}")
        if ex_id in seen:
            raise DuplicateIdError(str(path), lineno, ex_id)
        seen.add(ex_id)
        out.append(
            _build(path, lineno, Example, id=ex_id, db_id=str(db_id), question=str(question),
                   gold_sql=str(query), knowledge=rec.get("evidence"))
        )
    return out


def read_predictions(path: str | Path) -> list[Prediction]:
    out: list[Prediction] = []
    seen: set[int] = set()
    for lineno, rec in iter_records(path):
        ex_id = _require(rec, "example_id", path, lineno)
        sql = _require(rec, "sql", path, lineno)
        if ex_id in seen:
            raise DuplicateIdError(str(path), lineno, ex_id)
        seen.add(ex_id)
        out.append(_build(path, lineno, Prediction, example_id=int(ex_id), sql=str(sql)))
    return out


def read_candidates(path: str | Path) -> list[Candidate]:
    out: list[Candidate] = []
    for lineno, rec in iter_records(path):
        out.append(
            _build(path, lineno, Candidate,
                   example_id=int(_require(rec, "example_id", path, lineno)),
                   sql=str(_require(rec, "sql", path, lineno)),
                   source_model=str(rec.get("source_model", "weak")))
        )
    return out


def read_synth_points(path: str | Path) -> list[SynthDataPoint]:
    out: list[SynthDataPoint] = []
    for lineno, rec in iter_records(path):
        out.append(
            _build(path, lineno, SynthDataPoint,
                   domain=str(_require(rec, "domain", path, lineno)),
                   ddl=str(_require(rec, "schema_ddl", path, lineno)),
                   question=str(_require(rec, "question", path, lineno)),
                   answer_sql=str(_require(rec, "answer", path, lineno)),
                   level=str(_require(rec, "level", path, lineno)))
        )
    return out


def read_preference_pairs(path: str | Path) -> list[PreferencePair]:
    out: list[PreferencePair] = []
    for lineno, rec in iter_records(path):
        meta = dict(_require(rec, "meta", path, lineno))
        ex_id = _require(meta, "example_id", path, lineno)
        source = meta.pop("chosen_source", "weak_model")
        meta.pop("example_id")
        out.append(
            _build(path, lineno, PreferencePair,
                   example_id=int(ex_id),
                   prompt=str(_require(rec, "prompt", path, lineno)),
                   chosen=str(_require(rec, "chosen", path, lineno)),
                   rejected=str(_require(rec, "rejected", path, lineno)),
                   chosen_source=source, meta=meta)
        )
    return out


def dumps_record(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=False)


def write_jsonl(records: Iterable[Any], path: str | Path) -> int:
    """Write objects exposing ``to_record()`` (or plain dicts), one per line.

    Lines go to ``<path>.incomplete`` first, which is renamed into place only
    once every record is written; an interrupted run leaves the marked file.
    """
    path = Path(path)
    partial = path.with_name(path.name + INCOMPLETE_SUFFIX)
    n = 0
    with open(partial, "w", encoding="utf-8", newline="\n") as fh:
        for item in records:
            rec = item if isinstance(item, dict) else item.to_record()
            fh.write(dumps_record(rec))
            fh.write("\n")
            n += 1
    os.replace(partial, path)
    return n


def write_examples(examples: Iterable[Example], path: str | Path) -> int:
    return write_jsonl(examples, path)


def write_predictions(predictions: Iterable[Prediction], path: str | Path) -> int:
    return write_jsonl(predictions, path)


def write_candidates(candidates: Iterable[Candidate], path: str | Path) -> int:
    return write_jsonl(candidates, path)


def write_synth_points(points: Iterable[SynthDataPoint], path: str | Path) -> int:
    return write_jsonl(points, path)


def write_preference_pairs(pairs: Iterable[PreferencePair], path: str | Path) -> int:
    return write_jsonl(pairs, path)
