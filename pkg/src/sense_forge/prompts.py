"""Prompt rendering for inference and strong-data synthesis."""

from __future__ import annotations

import hashlib
import random
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, TypeVar

from .dataset import HARDNESS_TARGETS, Example, SynthDataPoint
from .errors import (
    NotEnoughExamplesError,
    UnknownTableInSampleError,
    WrongFewShotCountError,
)
from .schema import RowSample, Schema, bare_ident, introspect_schema, sample_rows

INSTRUCTION = "-- Using valid SQLite, answer the following questions for the tables provided above."
INSTRUCTION_WITH_KNOWLEDGE = (
    "-- Using valid SQLite and understanding External Knowledge, "
    "answer the following questions for the tables provided above."
)
KNOWLEDGE_PREFIX = "-- External Knowledge: "
QUESTION_PREFIX = "Question: "
DEFAULT_SAMPLE_ROWS = 3
COLUMN_GAP = 3

SYNTHESIS_TEMPLATE = """\
Your task is to generate one additional data point at the {the_level} difficulty level, in alignment with the format of the two provided data points.
1. Domain: Avoid domains that have been over-represented in our repository. Do not opt for themes like Education/Universities, Healthcare/Medical, Travel/Airlines, or Entertainment/Media.
2. Schema: Post your domain selection, craft an associated set of tables. These should feature logical columns, appropriate data types, and clear relationships.
3. Question Difficulty - {the_level}:
    - Easy: Simple queries focusing on a single table.
    - Medium: More comprehensive queries involving joins or aggregate functions across multiple tables.
    - Hard: Complex queries demanding deep comprehension, with answers that use multiple advanced features.
4. Answer: Formulate the SQL query that accurately addresses your question and is syntactically correct.
Additional Guidelines:
    - Venture into diverse topics or areas for your questions.
    - Ensure the SQL engages multiple tables and utilizes advanced constructs, especially for higher difficulty levels.
Ensure your submission only contains the Domain, Schema, Question, and Answer. Refrain from adding unrelated content or remarks.
"""

_TEMPLATE_PARTS = (INSTRUCTION, INSTRUCTION_WITH_KNOWLEDGE, KNOWLEDGE_PREFIX, QUESTION_PREFIX,
                   str(COLUMN_GAP), SYNTHESIS_TEMPLATE)
# Content hash: changes whenever any template constant changes.
PROMPT_TEMPLATE_VERSION = "prompt-" + hashlib.sha256("\x00".join(_TEMPLATE_PARTS).encode()).hexdigest()[:12]

T = TypeVar("T")


@dataclass(frozen=True)
class PromptText:
    text: str
    kind: Literal["inference", "synthesis"]

    def __str__(self) -> str:
        return self.text


def build_inference_prompt(
    schema: Schema,
    samples: Sequence[RowSample],
    question: str,
    knowledge: str | None = None,
    *,
    k: int = DEFAULT_SAMPLE_ROWS,
) -> PromptText:
    """Render the unified text-to-SQL prompt.

    One ``CREATE TABLE`` block per table in schema order, each followed by its
    row sample (if one was supplied), then the optional knowledge line, the
    instruction and the question. The text ends right after the question line.
    """
    by_table: dict[str, RowSample] = {}
    for sample in samples:
        table = schema.table(sample.table_name)
        if table is None:
            raise UnknownTableInSampleError(f"row sample names unknown table {sample.table_name!r}")
        by_table[table.name] = sample

    parts: list[str] = []
    for table in schema.tables:
        parts.append(table.to_ddl())
        sample = by_table.get(table.name)
        if sample is not None:
            parts.append(render_row_sample(sample, k))
    if knowledge is not None:
        parts.append(KNOWLEDGE_PREFIX + knowledge)
        parts.append(INSTRUCTION_WITH_KNOWLEDGE)
    else:
        parts.append(INSTRUCTION)
    parts.append(QUESTION_PREFIX + question)
    return PromptText("\n".join(parts) + "\n", "inference")


def render_row_sample(sample: RowSample, k: int = DEFAULT_SAMPLE_ROWS) -> str:
    """Render a ``/* k example rows: ... */`` block with left-aligned columns."""
    lines = [f"/* {k} example rows:", f"SELECT * FROM {bare_ident(sample.table_name)} LIMIT {k};"]
    grid = [list(sample.header)] + [list(r) for r in sample.rows]
    ncols = len(sample.header)
    widths = [max(len(row[i]) for row in grid) for i in range(ncols)]
    for row in grid:
        if not row:
            lines.append("")
            continue
        head = "".join(cell.ljust(widths[i] + COLUMN_GAP) for i, cell in enumerate(row[:-1]))
        lines.append(head + row[-1])
    lines.append("*/")
    return "\n".join(lines)


def prompt_for_database(
    db_file: str | Path,
    question: str,
    knowledge: str | None = None,
    *,
    k: int = DEFAULT_SAMPLE_ROWS,
    schema: Schema | None = None,
) -> PromptText:
    """Introspect ``db_file``, sample ``k`` rows per table and render the prompt."""
    schema = schema or introspect_schema(db_file)
    samples = [sample_rows(db_file, t.name, k) for t in schema.tables]
    return build_inference_prompt(schema, samples, question, knowledge, k=k)


def render_datapoint(point: SynthDataPoint) -> str:
    return f"Domain: {point.domain}\nSchema:\n{point.ddl}\nQuestion: {point.question}\nAnswer: {point.answer_sql}"


def example_as_datapoint(example: Example, schema: Schema, level: str = "easy") -> SynthDataPoint:
    """View a human-annotated example in the Domain/Schema/Question/Answer shape."""
    return SynthDataPoint(example.db_id, schema.to_ddl(), example.question, example.gold_sql, level)


def build_synthesis_prompt(level: str, few_shot: Sequence[SynthDataPoint]) -> PromptText:
    if level not in HARDNESS_TARGETS:
        raise ValueError(f"level must be one of {HARDNESS_TARGETS}, got {level!r}")
    if len(few_shot) != 2:
        raise WrongFewShotCountError(f"synthesis prompt needs exactly 2 demonstrations, got {len(few_shot)}")
    demos = "\n\n".join(render_datapoint(p) for p in few_shot)
    return PromptText(SYNTHESIS_TEMPLATE.format(the_level=level) + "\n" + demos + "\n", "synthesis")


def draw_few_shot(dataset: Sequence[T], n: int, seed: int) -> list[T]:
    """Sample ``n`` distinct examples uniformly without replacement."""
    if n > len(dataset):
        raise NotEnoughExamplesError(f"cannot draw {n} examples from a dataset of {len(dataset)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    return random.Random(seed).sample(list(dataset), n)
