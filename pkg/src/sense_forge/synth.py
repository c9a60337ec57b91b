"""Strong-data synthesis: request, parse, validate, and dataset statistics."""

from __future__ import annotations

import logging
import re
import sqlite3
import time
from collections import Counter
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any

import httpx

from .dataset import HARDNESS_TARGETS, StrongDataset, SynthDataPoint
from .errors import (
    AuthError,
    EndpointError,
    MissingSectionError,
    TrailingContentError,
    UnparsableSqlError,
)
from .executor import DEFAULT_TIMEOUT_MS, run_with_deadline
from .llm import Endpoint, chat_payload, complete
from .prompts import PromptText, build_synthesis_prompt, draw_few_shot
from .schema import (
    DEFAULT_MERGE_THRESHOLD,
    Schema,
    merge_similar_databases,
    schema_from_connection,
)
from .sqlast import count_joins, first_statement_end

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 1.0
DEFAULT_MAX_TOKENS = 1024
DEFAULT_CONCURRENCY = 4
TOKEN_DEFINITION = "whitespace tokens of question + ' ' + SQL"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: PromptText
    level: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.prompt.kind != "synthesis":
            raise ValueError("generation requests carry synthesis prompts")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


def request_generation(endpoint: Endpoint, request: GenerationRequest, client: httpx.Client | None = None) -> str:
    payload = chat_payload(request.prompt.text, endpoint.model, temperature=request.temperature,
                           max_tokens=request.max_tokens, seed=request.seed)
    return complete(endpoint, payload, client)


# -- parsing -----------------------------------------------------------------

SECTIONS = ("Domain", "Schema", "Question", "Answer")

_HEADER_TEMPLATE = (
    r"^[ \t>]*(?:\#{{1,6}}[ \t]*)?(?:\d+[.)][ \t]*)?(?:\*\*|__)?[ \t]*"
    r"{name}[ \t]*(?:\*\*|__)?[ \t]*:[ \t]*(?:\*\*|__)?[ \t]*"
)
_HEADERS = {name: re.compile(_HEADER_TEMPLATE.format(name=name), re.I | re.M) for name in SECTIONS}
_FENCED = re.compile(r"\A```[^\n`]*\n(.*?)\n?[ \t]*```(.*)\Z", re.S)


def _strip_fences(text: str) -> tuple[str, str]:
    """Return (content, text after the closing fence)."""
    text = text.strip()
    m = _FENCED.match(text)
    if m:
        return m.group(1), m.group(2)
    if len(text) >= 2 and text.startswith("`") and text.endswith("`") and "\n" not in text:
        return text.strip("`"), ""
    return text, ""


def _parse_answer(body: str) -> str:
    content, after = _strip_fences(body)
    if after.strip():
        raise TrailingContentError(f"unexpected content after the answer block: {after.strip()[:60]!r}")
    if body.strip().startswith("```"):
        return content
    end = first_statement_end(content)
    if end is not None:
        rest = content[end + 1:].strip()
        if rest:
            raise TrailingContentError(f"unexpected content after the answer SQL: {rest[:60]!r}")
        return content[: end + 1].strip()
    paragraphs = re.split(r"\n[ \t]*\n", content.strip(), maxsplit=1)
    if len(paragraphs) > 1 and paragraphs[1].strip():
        raise TrailingContentError(f"unexpected content after the answer SQL: {paragraphs[1].strip()[:60]!r}")
    return content.strip()


def parse_datapoint(raw: str, level: str) -> SynthDataPoint:
    """Pull the Domain/Schema/Question/Answer sections out of a model reply.

    Headers match case-insensitively and may carry markdown decoration
    (``**Schema:**``, ``### Answer:``, ``1. Domain:``). Text before the Domain
    header is ignored; anything after the answer SQL is rejected.
    """
    spans: list[tuple[str, int, int]] = []
    pos = 0
    for name in SECTIONS:
        m = _HEADERS[name].search(raw, pos)
        if m is None:
            raise MissingSectionError(name)
        spans.append((name, m.start(), m.end()))
        pos = m.end()
    bodies: dict[str, str] = {}
    for i, (name, _start, end) in enumerate(spans):
        stop = spans[i + 1][1] if i + 1 < len(spans) else len(raw)
        bodies[name] = raw[end:stop]
    for name in ("Domain", "Schema", "Question"):
        if not bodies[name].strip():
            raise MissingSectionError(name)
    answer = _parse_answer(bodies["Answer"])
    if not answer.strip():
        raise MissingSectionError("Answer")
    ddl, _ = _strip_fences(bodies["Schema"])
    return SynthDataPoint(
        domain=bodies["Domain"].strip(),
        ddl=ddl.strip(),
        question=bodies["Question"].strip(),
        answer_sql=answer,
        level=level,
    )


# -- validation --------------------------------------------------------------

class ValidationStatus(str, Enum):
    VALID = "valid"
    INVALID_DDL = "invalid_ddl"
    INVALID_SQL = "invalid_sql"
    EMPTY_RESULT = "empty_result"


@dataclass(frozen=True)
class ValidationVerdict:
    status: ValidationStatus
    message: str = ""
    row_count: int = 0

    @property
    def usable(self) -> bool:
        """Valid and EmptyResult points are kept; the others are quarantined."""
        return self.status in (ValidationStatus.VALID, ValidationStatus.EMPTY_RESULT)


def _scratch_connection() -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:", check_same_thread=False)

    def authorizer(action: int, *args: object) -> int:
        if action in (sqlite3.SQLITE_ATTACH, sqlite3.SQLITE_DETACH):
            return sqlite3.SQLITE_DENY
        return sqlite3.SQLITE_OK

    conn.set_authorizer(authorizer)
    return conn


_VACUUM = re.compile(r"\bvacuum\b", re.I)


def _load_ddl(conn: sqlite3.Connection, ddl: str, timeout_ms: int) -> str | None:
    if _VACUUM.search(ddl):
        return "VACUUM is not allowed in schema definitions"
    deadline = time.monotonic() + timeout_ms / 1000
    conn.set_progress_handler(lambda: int(time.monotonic() > deadline), 1000)
    try:
        conn.executescript(ddl)
    except (sqlite3.Error, sqlite3.Warning, ValueError) as exc:
        return str(exc)
    finally:
        conn.set_progress_handler(None, 0)
    return None


def validate_datapoint(point: SynthDataPoint, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ValidationVerdict:
    """Run the DDL in a fresh in-memory database, then the answer query.

    Zero result rows give EMPTY_RESULT, which is flagged for curation but not
    fatal. An answer that is not a query at all is INVALID_SQL.
    """
    conn = _scratch_connection()
    try:
        problem = _load_ddl(conn, point.ddl, timeout_ms)
        if problem is not None:
            return ValidationVerdict(ValidationStatus.INVALID_DDL, problem)
        if _VACUUM.search(point.answer_sql):
            return ValidationVerdict(ValidationStatus.INVALID_SQL, "VACUUM is not a query")
        result = run_with_deadline(conn, point.answer_sql, timeout_ms)
        if not result.ok:
            return ValidationVerdict(ValidationStatus.INVALID_SQL, result.message or result.error.value)
        if result.columns is None:
            return ValidationVerdict(ValidationStatus.INVALID_SQL, "answer is not a query")
        assert result.rows is not None
        if not result.rows:
            return ValidationVerdict(ValidationStatus.EMPTY_RESULT, "query returned no rows", 0)
        return ValidationVerdict(ValidationStatus.VALID, "", len(result.rows))
    finally:
        conn.close()


def schema_from_ddl(ddl: str, db_id: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> Schema | None:
    """Materialize DDL in memory and introspect it; None if it does not load."""
    conn = _scratch_connection()
    try:
        if _load_ddl(conn, ddl, timeout_ms) is not None:
            return None
        try:
            return schema_from_connection(conn, db_id)
        except (sqlite3.Error, ValueError):
            return None
    finally:
        conn.close()


# -- statistics --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    n_examples: int
    n_databases: int
    avg_tokens: Fraction | None
    avg_joins: Fraction | None
    domain_density: tuple[tuple[str, int], ...]
    n_unparsable: int = 0
    token_definition: str = TOKEN_DEFINITION

    @property
    def examples_per_db(self) -> Fraction | None:
        return Fraction(self.n_examples, self.n_databases) if self.n_databases else None

    def to_json(self) -> dict[str, Any]:
        def num(x: Fraction | None, digits: int) -> float | None:
            return None if x is None else round(float(x), digits)

        return {
            "n_examples": self.n_examples,
            "n_databases": self.n_databases,
            "examples_per_db": num(self.examples_per_db, 1),
            "avg_tokens": num(self.avg_tokens, 1),
            "avg_joins": num(self.avg_joins, 2),
            "token_definition": self.token_definition,
            "n_unparsable_sql": self.n_unparsable,
            "domain_density": [[d, c] for d, c in self.domain_density],
        }

    def table_row(self, name: str) -> str:
        def fmt(x: Fraction | None, digits: int) -> str:
            return "-" if x is None else f"{float(x):.{digits}f}"

        return " & ".join([
            name, str(self.n_examples), str(self.n_databases),
            fmt(self.examples_per_db, 1), fmt(self.avg_tokens, 1), fmt(self.avg_joins, 2),
        ])


def _mean(values: Sequence[int]) -> Fraction | None:
    return Fraction(sum(values), len(values)) if values else None


def dataset_stats(
    dataset: StrongDataset,
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
    schemas: Mapping[str, Schema] | None = None,
) -> DatasetStats:
    """Size, length and join statistics for a strong dataset.

    Databases are counted after similarity merging. Human examples contribute
    the schemas given in ``schemas`` (keyed by db_id); a db_id without one is
    counted as its own database. Synthesized points contribute the schema
    their DDL produces. The domain of a human example is its db_id.
    """
    schemas = schemas or {}
    mergeable: list[Schema] = []
    loners: set[str] = set()
    for db_id in sorted({e.db_id for e in dataset.human}):
        if db_id in schemas:
            mergeable.append(schemas[db_id])
        else:
            loners.add(db_id)
    for i, point in enumerate(dataset.synthetic):
        sid = f"synthetic:{i:06d}"
        schema = schema_from_ddl(point.ddl, sid)
        if schema is None or not schema.tables:
            loners.add(sid)
        else:
            mergeable.append(schema)
    n_databases = len(loners) + (len(merge_similar_databases(mergeable, merge_threshold)) if mergeable else 0)

    pairs = [(e.question, e.gold_sql) for e in dataset.human] + [(p.question, p.answer_sql) for p in dataset.synthetic]
    tokens = [len(f"{q} {sql}".split()) for q, sql in pairs]
    joins: list[int] = []
    unparsable = 0
    for _, sql in pairs:
        try:
            joins.append(count_joins(sql))
        except UnparsableSqlError:
            unparsable += 1

    domains = Counter([e.db_id for e in dataset.human] + [p.domain.strip() for p in dataset.synthetic])
    density = tuple(sorted(domains.items(), key=lambda kv: (-kv[1], kv[0])))
    return DatasetStats(
        n_examples=len(pairs),
        n_databases=n_databases,
        avg_tokens=_mean(tokens),
        avg_joins=_mean(joins),
        domain_density=density,
        n_unparsable=unparsable,
    )


# -- batch orchestration -----------------------------------------------------

def level_schedule(level: str, n: int) -> list[str]:
    """``mix`` cycles easy/medium/hard; a single level repeats."""
    if level == "mix":
        return [HARDNESS_TARGETS[i % 3] for i in range(n)]
    if level not in HARDNESS_TARGETS:
        raise ValueError(f"level must be easy, medium, hard or mix, got {level!r}")
    return [level] * n


@dataclass
class SynthesisOutcome:
    accepted: list[SynthDataPoint] = field(default_factory=list)
    rejected: list[dict[str, Any]] = field(default_factory=list)
    empty_results: int = 0


def synthesize(
    endpoint: Endpoint,
    demonstrations: Sequence[SynthDataPoint],
    n: int,
    level: str = "mix",
    seed: int = 0,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    concurrency: int = DEFAULT_CONCURRENCY,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> SynthesisOutcome:
    """Generate ``n`` points; output order follows the request index.

    Request ``i`` draws its two demonstrations with seed ``seed * 1000003 + i``.
    Authentication failures abort the batch; any other failure is quarantined
    as a reject record rather than dropped.
    """
    levels = level_schedule(level, n)

    def run(i: int) -> tuple[str | None, str | None]:
        demos = draw_few_shot(demonstrations, 2, seed * 1_000_003 + i)
        request = GenerationRequest(build_synthesis_prompt(levels[i], demos), levels[i],
                                    max_tokens=max_tokens, temperature=temperature, seed=seed + i)
        try:
            return request_generation(endpoint, request, client), None
        except AuthError:
            raise
        except EndpointError as exc:
            return None, str(exc)

    with endpoint.client() as client, ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        replies = list(pool.map(run, range(n)))

    outcome = SynthesisOutcome()
    for i, (raw, failure) in enumerate(replies):
        base = {"index": i, "level": levels[i]}
        if raw is None:
            outcome.rejected.append({**base, "stage": "request", "verdict": "request_failed", "message": failure})
            continue
        try:
            point = parse_datapoint(raw, levels[i])
        except (MissingSectionError, TrailingContentError, ValueError) as exc:
            outcome.rejected.append({**base, "stage": "parse", "verdict": type(exc).__name__,
                                     "message": str(exc), "raw": raw})
            continue
        verdict = validate_datapoint(point, timeout_ms)
        if not verdict.usable:
            outcome.rejected.append({**base, "stage": "validate", "verdict": verdict.status.value,
                                     "message": verdict.message, "raw": raw})
            continue
        if verdict.status is ValidationStatus.EMPTY_RESULT:
            outcome.empty_results += 1
        outcome.accepted.append(point)
    return outcome
