"""Execution accuracy (EX), test-suite accuracy (TS) and hardness-stratified reports."""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any

from .dataset import Example, Prediction
from .errors import MissingDatabaseError, MissingPredictionError, UnparsableSqlError
from .executor import DEFAULT_TIMEOUT_MS, MatchStatus, MatchVerdict, results_match
from .hardness import LEVELS, HardnessLevel, classify_hardness
from .schema import database_path
from .testsuite import TestSuite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExampleVerdict:
    example_id: int
    verdict: MatchVerdict
    hardness: HardnessLevel

    @property
    def correct(self) -> bool:
        return self.verdict.is_match

    def to_record(self) -> dict[str, Any]:
        return {"example_id": self.example_id, "hardness": self.hardness.value, "verdict": self.verdict.to_record()}


def percent(value: Fraction | None) -> float | None:
    """Percentage rounded half-up to one decimal, or None when undefined."""
    if value is None:
        return None
    scaled = Decimal(value.numerator * 100) / Decimal(value.denominator)
    return float(scaled.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_percent(value: Fraction | None) -> str:
    p = percent(value)
    return "-" if p is None else f"{p:.1f}"


@dataclass
class MetricsReport:
    metric: str
    per_example: list[ExampleVerdict] = field(default_factory=list)
    gold_errors: list[ExampleVerdict] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.per_example)

    @property
    def correct(self) -> int:
        return sum(v.correct for v in self.per_example)

    @property
    def overall_accuracy(self) -> Fraction | None:
        return Fraction(self.correct, self.total) if self.total else None

    @property
    def by_hardness(self) -> dict[HardnessLevel, tuple[int, Fraction | None]]:
        out: dict[HardnessLevel, tuple[int, Fraction | None]] = {}
        for level in LEVELS:
            bucket = [v for v in self.per_example if v.hardness is level]
            hits = sum(v.correct for v in bucket)
            out[level] = (len(bucket), Fraction(hits, len(bucket)) if bucket else None)
        return out

    def verdicts(self) -> dict[int, MatchVerdict]:
        return {v.example_id: v.verdict for v in self.per_example}

    def to_json(self, versions: Mapping[str, str] | None = None) -> dict[str, Any]:
        acc = self.overall_accuracy
        rec: dict[str, Any] = {"metric": self.metric}
        if versions is not None:
            rec["versions"] = dict(versions)
        rec["overall"] = {
            "correct": self.correct,
            "total": self.total,
            "accuracy": None if acc is None else f"{acc.numerator}/{acc.denominator}",
            "percent": percent(acc),
        }
        rec["by_hardness"] = {
            level.label: {
                "count": count,
                "correct": 0 if frac is None else int(frac * count),
                "percent": percent(frac),
            }
            for level, (count, frac) in self.by_hardness.items()
        }
        rec["per_example"] = [v.to_record() for v in self.per_example]
        rec["gold_errors"] = [v.to_record() for v in self.gold_errors]
        return rec


def report_by_hardness(report: MetricsReport) -> str:
    """Plain-text table: one row per hardness level plus ``All``."""
    rows = [("Level", "Count", "Accuracy")]
    for level, (count, frac) in report.by_hardness.items():
        rows.append((level.label, str(count), format_percent(frac)))
    rows.append(("All", str(report.total), format_percent(report.overall_accuracy)))
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{a:<{width}}  {b:>5}  {c:>8}" for a, b, c in rows) + "\n"


def hardness_of(sql: str) -> HardnessLevel:
    try:
        return classify_hardness(sql)
    except UnparsableSqlError:
        log.warning("gold SQL not parseable for hardness, bucketed as Extra Hard: %r", sql)
        return HardnessLevel.EXTRA_HARD


def _pair_up(examples: Sequence[Example], predictions: Sequence[Prediction]) -> list[tuple[Example, str]]:
    by_id = {p.example_id: p.sql for p in predictions}
    known = {e.id for e in examples}
    stray = sorted(set(by_id) - known)
    if stray:
        log.warning("ignoring %d predictions for unknown example ids (first: %d)", len(stray), stray[0])
    pairs = []
    for ex in examples:
        if ex.id not in by_id:
            raise MissingPredictionError(ex.id)
        pairs.append((ex, by_id[ex.id]))
    return pairs


def _evaluate(
    pairs: Sequence[tuple[Example, str]],
    judge: Callable[[Example, str], MatchVerdict],
    metric: str,
    workers: int,
) -> MetricsReport:
    def one(item: tuple[Example, str]) -> ExampleVerdict:
        ex, sql = item
        return ExampleVerdict(ex.id, judge(ex, sql), hardness_of(ex.gold_sql))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    results.sort(key=lambda v: v.example_id)
    report = MetricsReport(metric)
    for v in results:
        (report.gold_errors if v.verdict.status is MatchStatus.GOLD_ERROR else report.per_example).append(v)
    return report


def ex_accuracy(
    examples: Sequence[Example],
    predictions: Sequence[Prediction],
    db_root: str | Path,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    *,
    workers: int = 1,
    column_permutations: bool = False,
) -> MetricsReport:
    """Execution accuracy; gold queries that fail are reported, not scored."""
    pairs = _pair_up(examples, predictions)
    paths: dict[str, Path] = {}
    for ex in examples:
        path = database_path(db_root, ex.db_id)
        if not path.is_file():
            raise MissingDatabaseError(ex.db_id, str(path))
        paths[ex.db_id] = path

    def judge(ex: Example, sql: str) -> MatchVerdict:
        return results_match(paths[ex.db_id], sql, ex.gold_sql, timeout_ms, column_permutations=column_permutations)

    return _evaluate(pairs, judge, "ex", workers)


def ts_verdict(
    suite: TestSuite,
    predicted_sql: str,
    gold_sql: str,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    *,
    column_permutations: bool = False,
) -> MatchVerdict:
    """Match on every variant, original first.

    A gold failure on the original makes the example unscorable. A gold failure
    on a perturbed variant only disqualifies that variant.
    """
    first = results_match(suite.original, predicted_sql, gold_sql, timeout_ms, column_permutations=column_permutations)
    if not first.is_match:
        return first
    for index, variant in enumerate(suite.variants[1:], start=1):
        v = results_match(variant, predicted_sql, gold_sql, timeout_ms, column_permutations=column_permutations)
        if v.status is MatchStatus.GOLD_ERROR:
            log.debug("variant %d of %s: gold failed, variant skipped", index, suite.db_id)
            continue
        if not v.is_match:
            return MatchVerdict(v.status, v.kind, f"variant {index}" + (f": {v.message}" if v.message else ""))
    return first


def ts_accuracy(
    examples: Sequence[Example],
    predictions: Sequence[Prediction],
    suites: Mapping[str, TestSuite],
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    *,
    workers: int = 1,
    column_permutations: bool = False,
) -> MetricsReport:
    """Test-suite accuracy: correct iff the prediction matches on every variant."""
    pairs = _pair_up(examples, predictions)
    for ex in examples:
        suite = suites.get(ex.db_id)
        if suite is None or not suite.original.is_file():
            raise MissingDatabaseError(ex.db_id, str(suite.original) if suite else "<no test suite>")

    def judge(ex: Example, sql: str) -> MatchVerdict:
        return ts_verdict(suites[ex.db_id], sql, ex.gold_sql, timeout_ms, column_permutations=column_permutations)

    return _evaluate(pairs, judge, "ts", workers)
