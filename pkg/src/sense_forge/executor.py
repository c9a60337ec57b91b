"""Read-only SQL execution, result canonicalization and the execution-match predicate."""

from __future__ import annotations

import itertools
import math
import sqlite3
import time
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from .schema import connect_readonly
from .sqlast import has_top_level_order_by

DEFAULT_TIMEOUT_MS = 30_000
FLOAT_REL_TOL = 1e-6
# VM instructions between watchdog checks.
_PROGRESS_STEPS = 1_000
_MAX_PERMUTATION_ARITY = 6


class ErrorKind(str, Enum):
    SYNTAX = "syntax"
    MISSING_ENTITY = "missing_entity"
    RUNTIME = "runtime"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecutionResult:
    """Rows on success, otherwise an error kind and message.

    A timeout is reported as ``error == ErrorKind.TIMEOUT``.
    """

    rows: tuple[tuple[Any, ...], ...] | None = None
    columns: tuple[str, ...] | None = None
    error: ErrorKind | None = None
    message: str = ""
    elapsed_ms: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def timed_out(self) -> bool:
        return self.error is ErrorKind.TIMEOUT


_SYNTAX_MARKERS = ("syntax error", "incomplete input", "unrecognized token")
_MISSING_MARKERS = ("no such table", "no such column", "no such function", "ambiguous column name")


def classify_error(message: str) -> ErrorKind:
    low = message.lower()
    if any(m in low for m in _SYNTAX_MARKERS):
        return ErrorKind.SYNTAX
    if any(m in low for m in _MISSING_MARKERS):
        return ErrorKind.MISSING_ENTITY
    return ErrorKind.RUNTIME


def _deny_attach(action: int, *args: object) -> int:
    if action in (sqlite3.SQLITE_ATTACH, sqlite3.SQLITE_DETACH):
        return sqlite3.SQLITE_DENY
    return sqlite3.SQLITE_OK


def run_with_deadline(conn: sqlite3.Connection, sql: str, timeout_ms: int) -> ExecutionResult:
    """Execute one statement on an open connection under a wall-clock deadline."""
    start = time.monotonic()
    deadline = start + timeout_ms / 1000.0
    expired = False

    def watchdog() -> int:
        nonlocal expired
        if time.monotonic() > deadline:
            expired = True
            return 1
        return 0

    conn.set_progress_handler(watchdog, _PROGRESS_STEPS)
    try:
        cur = conn.execute(sql)
        rows = tuple(tuple(r) for r in cur.fetchall())
        columns = None if cur.description is None else tuple(d[0] for d in cur.description)
    except (sqlite3.Error, sqlite3.Warning, ValueError, OverflowError) as exc:
        elapsed = (time.monotonic() - start) * 1000
        if expired:
            return ExecutionResult(error=ErrorKind.TIMEOUT, message=f"exceeded {timeout_ms} ms", elapsed_ms=elapsed)
        return ExecutionResult(error=classify_error(str(exc)), message=str(exc), elapsed_ms=elapsed)
    finally:
        conn.set_progress_handler(None, 0)
    return ExecutionResult(rows=rows, columns=columns, elapsed_ms=(time.monotonic() - start) * 1000)


def execute(db_file: str | Path, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecutionResult:
    """Run ``sql`` read-only against ``db_file``.

    Errors never escape: they come back classified inside the result. The
    connection is opened with ``mode=ro`` plus ``query_only`` so DML and DDL
    fail instead of touching the file, and ATTACH is refused.
    """
    if timeout_ms <= 0:
        raise ValueError("timeout_ms must be positive")
    conn = connect_readonly(db_file)
    try:
        conn.execute("PRAGMA query_only = ON")
        conn.set_authorizer(_deny_attach)
        return run_with_deadline(conn, sql, timeout_ms)
    finally:
        conn.close()


class _Null:
    """Distinguished NULL marker; equal only to itself and sorts first."""

    _instance: _Null | None = None

    def __new__(cls) -> _Null:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NULL"

    def __reduce__(self) -> str:
        return "NULL"


NULL = _Null()


def normalize_cell(value: Any) -> Any:
    if value is None or value is NULL:
        return NULL
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float) and math.isfinite(value) and value.is_integer():
        return int(value)
    return value


def _sort_key(cell: Any) -> tuple[int, Any]:
    if cell is NULL:
        return (0, 0)
    if isinstance(cell, (int, float)):
        if isinstance(cell, float) and math.isnan(cell):
            return (1, float("-inf"))
        return (1, cell)
    if isinstance(cell, str):
        return (2, cell)
    if isinstance(cell, bytes):
        return (3, cell)
    return (4, repr(cell))


def row_sort_key(row: Sequence[Any]) -> tuple[tuple[int, Any], ...]:
    return tuple(_sort_key(c) for c in row)


@dataclass(frozen=True)
class CanonicalResult:
    rows: tuple[tuple[Any, ...], ...]
    ordered: bool

    def matches(self, other: CanonicalResult, rel_tol: float = FLOAT_REL_TOL) -> bool:
        if len(self.rows) != len(other.rows):
            return False
        return all(_rows_close(a, b, rel_tol) for a, b in zip(self.rows, other.rows))


def _cells_close(a: Any, b: Any, rel_tol: float) -> bool:
    if a is NULL or b is NULL:
        return a is b
    num_a = isinstance(a, (int, float))
    num_b = isinstance(b, (int, float))
    if num_a and num_b:
        if a == b:
            return True
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=0.0)
    if num_a != num_b:
        return False
    return type(a) is type(b) and a == b


def _rows_close(a: Sequence[Any], b: Sequence[Any], rel_tol: float) -> bool:
    return len(a) == len(b) and all(_cells_close(x, y, rel_tol) for x, y in zip(a, b))


def canonicalize(rows: Sequence[Sequence[Any]], order_sensitive: bool) -> CanonicalResult:
    """Normalize cells and, for unordered results, sort rows into a total order."""
    normalized = [tuple(normalize_cell(c) for c in row) for row in rows]
    if not order_sensitive:
        normalized.sort(key=row_sort_key)
    return CanonicalResult(tuple(normalized), order_sensitive)


class MatchStatus(str, Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    PRED_ERROR = "pred_error"
    GOLD_ERROR = "gold_error"


@dataclass(frozen=True)
class MatchVerdict:
    status: MatchStatus
    kind: ErrorKind | None = None
    message: str = ""

    @property
    def is_match(self) -> bool:
        return self.status is MatchStatus.MATCH

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"status": self.status.value}
        if self.kind is not None:
            rec["kind"] = self.kind.value
        if self.message:
            rec["message"] = self.message
        return rec


MATCH = MatchVerdict(MatchStatus.MATCH)
MISMATCH = MatchVerdict(MatchStatus.MISMATCH)


def compare_results(
    pred_rows: Sequence[Sequence[Any]],
    gold_rows: Sequence[Sequence[Any]],
    order_sensitive: bool,
    *,
    rel_tol: float = FLOAT_REL_TOL,
    column_permutations: bool = False,
) -> bool:
    gold = canonicalize(gold_rows, order_sensitive)
    if canonicalize(pred_rows, order_sensitive).matches(gold, rel_tol):
        return True
    if not column_permutations or not pred_rows or not gold_rows:
        return False
    arity = len(pred_rows[0])
    if arity != len(gold_rows[0]) or arity > _MAX_PERMUTATION_ARITY:
        return False
    for perm in itertools.permutations(range(arity)):
        permuted = [tuple(row[i] for i in perm) for row in pred_rows]
        if canonicalize(permuted, order_sensitive).matches(gold, rel_tol):
            return True
    return False


def results_match(
    db_file: str | Path,
    predicted_sql: str,
    gold_sql: str,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    *,
    rel_tol: float = FLOAT_REL_TOL,
    column_permutations: bool = False,
    gold_result: ExecutionResult | None = None,
) -> MatchVerdict:
    """Decide whether the predicted query reproduces the gold query's result.

    Row order only matters when the gold query has a top-level ORDER BY.
    Columns are compared positionally unless ``column_permutations`` is set.
    A precomputed ``gold_result`` may be passed to skip re-running the gold.
    """
    gold = gold_result if gold_result is not None else execute(db_file, gold_sql, timeout_ms)
    if not gold.ok:
        return MatchVerdict(MatchStatus.GOLD_ERROR, gold.error, gold.message)
    pred = execute(db_file, predicted_sql, timeout_ms)
    if not pred.ok:
        return MatchVerdict(MatchStatus.PRED_ERROR, pred.error, pred.message)
    ordered = has_top_level_order_by(gold_sql)
    assert pred.rows is not None and gold.rows is not None
    if compare_results(pred.rows, gold.rows, ordered, rel_tol=rel_tol, column_permutations=column_permutations):
        return MATCH
    return MISMATCH
