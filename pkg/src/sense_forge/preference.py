"""Execution-labelled weak-model candidates and DPO preference pairs."""

from __future__ import annotations

import logging
import re
import threading
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .dataset import Candidate, Example, PreferencePair
from .errors import GoldExecutionFailedError, MissingDatabaseError
from .executor import DEFAULT_TIMEOUT_MS, ErrorKind, MatchStatus, execute, results_match
from .llm import Endpoint, chat_payload, complete
from .prompts import DEFAULT_SAMPLE_ROWS, build_inference_prompt
from .schema import RowSample, Schema, database_path, introspect_schema, sample_rows
from .sqlast import first_statement_end

log = logging.getLogger(__name__)

DEFAULT_K_SAMPLES = 4
DEFAULT_TEMPERATURE = 0.8
DEFAULT_MAX_TOKENS = 512
POLICIES = ("gold_backstop", "weak_vs_weak")


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Reason(str, Enum):
    EXEC_MATCH = "exec_match"
    EXEC_MISMATCH = "exec_mismatch"
    EXEC_ERROR = "exec_error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class PreferenceLabel:
    value: Label
    reason: Reason

    def __post_init__(self) -> None:
        if (self.value is Label.POSITIVE) != (self.reason is Reason.EXEC_MATCH):
            raise ValueError("a label is positive exactly when the reason is an execution match")

    @property
    def positive(self) -> bool:
        return self.value is Label.POSITIVE


POSITIVE = PreferenceLabel(Label.POSITIVE, Reason.EXEC_MATCH)


@dataclass(frozen=True)
class LabeledCandidate:
    candidate: Candidate
    label: PreferenceLabel


class _PromptCache:
    """Schema and row samples per database, introspected once and shared across threads."""

    def __init__(self, db_root: str | Path, k: int) -> None:
        self.db_root = Path(db_root)
        self.k = k
        self._lock = threading.Lock()
        self._inputs: dict[str, tuple[Schema, list[RowSample]]] = {}

    def _load(self, db_id: str) -> tuple[Schema, list[RowSample]]:
        with self._lock:
            if db_id not in self._inputs:
                path = database_path(self.db_root, db_id)
                if not path.is_file():
                    raise MissingDatabaseError(db_id, str(path))
                schema = introspect_schema(path, db_id)
                self._inputs[db_id] = (schema, [sample_rows(path, t.name, self.k) for t in schema.tables])
            return self._inputs[db_id]

    def prompt(self, example: Example) -> str:
        schema, samples = self._load(example.db_id)
        return build_inference_prompt(schema, samples, example.question, example.knowledge, k=self.k).text


def label_candidate(
    example: Example,
    candidate: Candidate,
    db_root: str | Path,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> PreferenceLabel:
    """Positive iff the candidate's result equals the gold result.

    Mismatches, execution errors and timeouts are all negative. A failing gold
    query is a fixture bug and raises :class:`GoldExecutionFailedError`.
    """
    if example.id != candidate.example_id:
        raise ValueError(f"candidate for example {candidate.example_id} labelled against example {example.id}")
    return _label_all(example, [candidate], db_root, timeout_ms)[0].label


def _label_all(
    example: Example, candidates: Sequence[Candidate], db_root: str | Path, timeout_ms: int
) -> list[LabeledCandidate]:
    path = database_path(db_root, example.db_id)
    if not path.is_file():
        raise MissingDatabaseError(example.db_id, str(path))
    gold = execute(path, example.gold_sql, timeout_ms)
    if not gold.ok:
        raise GoldExecutionFailedError(example.id, gold.message)
    out = []
    for cand in candidates:
        verdict = results_match(path, cand.sql, example.gold_sql, timeout_ms, gold_result=gold)
        if verdict.status is MatchStatus.MATCH:
            label = POSITIVE
        elif verdict.status is MatchStatus.MISMATCH:
            label = PreferenceLabel(Label.NEGATIVE, Reason.EXEC_MISMATCH)
        elif verdict.kind is ErrorKind.TIMEOUT:
            label = PreferenceLabel(Label.NEGATIVE, Reason.TIMEOUT)
        else:
            label = PreferenceLabel(Label.NEGATIVE, Reason.EXEC_ERROR)
        out.append(LabeledCandidate(cand, label))
    return out


def group_candidates(examples: Sequence[Example], candidates: Iterable[Candidate]) -> dict[int, list[Candidate]]:
    known = {e.id for e in examples}
    grouped: dict[int, list[Candidate]] = {}
    for cand in candidates:
        if cand.example_id not in known:
            log.warning("candidate for unknown example %d ignored", cand.example_id)
            continue
        grouped.setdefault(cand.example_id, []).append(cand)
    return grouped


def label_candidates(
    examples: Sequence[Example],
    candidates: Iterable[Candidate],
    db_root: str | Path,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    *,
    workers: int = 1,
) -> dict[int, list[LabeledCandidate]]:
    """Label every candidate; result keyed by example id, candidate order kept."""
    grouped = group_candidates(examples, candidates)
    todo = [e for e in examples if e.id in grouped]

    def one(ex: Example) -> list[LabeledCandidate]:
        return _label_all(ex, grouped[ex.id], db_root, timeout_ms)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, todo))
    else:
        results = [one(e) for e in todo]
    return {ex.id: labeled for ex, labeled in zip(todo, results)}


def pair_labeled(
    example: Example,
    labeled: Sequence[LabeledCandidate],
    prompt: str,
    policy: str = "gold_backstop",
) -> list[PreferencePair]:
    """Pair each negative with the first positive candidate (or the gold SQL)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown pairing policy {policy!r}; expected one of {POLICIES}")
    negatives = [lc for lc in labeled if not lc.label.positive]
    if not negatives:
        return []
    positives = [lc for lc in labeled if lc.label.positive]
    if positives:
        chosen, source, chosen_model = positives[0].candidate.sql, "weak_model", positives[0].candidate.source_model
    elif policy == "gold_backstop":
        chosen, source, chosen_model = example.gold_sql, "gold", None
    else:
        return []
    pairs = []
    for lc in negatives:
        if lc.candidate.sql == chosen:
            continue
        meta = {"rejected_reason": lc.label.reason.value, "rejected_model": lc.candidate.source_model}
        if chosen_model is not None:
            meta["chosen_model"] = chosen_model
        pairs.append(PreferencePair(example.id, prompt, chosen, lc.candidate.sql, source, meta))
    return pairs


def build_preference_dataset(
    examples: Sequence[Example],
    candidates: Iterable[Candidate],
    db_root: str | Path,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    policy: str = "gold_backstop",
    *,
    workers: int = 1,
    sample_rows: int = DEFAULT_SAMPLE_ROWS,
) -> list[PreferencePair]:
    if policy not in POLICIES:
        raise ValueError(f"unknown pairing policy {policy!r}; expected one of {POLICIES}")
    labeled = label_candidates(examples, candidates, db_root, timeout_ms, workers=workers)
    prompts = _PromptCache(db_root, sample_rows)
    pairs: list[PreferencePair] = []
    for ex in sorted(examples, key=lambda e: e.id):
        if ex.id not in labeled:
            continue
        if all(lc.label.positive for lc in labeled[ex.id]):
            continue
        pairs.extend(pair_labeled(ex, labeled[ex.id], prompts.prompt(ex), policy))
    return pairs


# -- candidate generation ----------------------------------------------------

_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)
_LINE_START_QUERY = re.compile(r"^[ \t]*(?:SELECT|WITH)\b", re.I | re.M)
_UPPER_SELECT = re.compile(r"\bSELECT\b")


def extract_sql(completion: str) -> str:
    """First SQL statement of a completion.

    The statement starts at the first fenced code block if there is one, else
    at the first line beginning with SELECT/WITH, else at the first uppercase
    SELECT, else at the start of the text. It ends at the first semicolon
    outside quotes, or at the end of the text.
    """
    fenced = _FENCE.search(completion)
    if fenced:
        text = fenced.group(1)
    else:
        m = _LINE_START_QUERY.search(completion) or _UPPER_SELECT.search(completion)
        text = completion[m.start():] if m else completion
    end = first_statement_end(text)
    if end is not None:
        text = text[:end]
    return text.strip()


def generate_candidates(
    endpoint: Endpoint,
    examples: Sequence[Example],
    db_root: str | Path,
    k_samples: int = DEFAULT_K_SAMPLES,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = 0,
    *,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    concurrency: int = 4,
    source_model: str | None = None,
    sample_rows: int = DEFAULT_SAMPLE_ROWS,
) -> list[Candidate]:
    """Sample ``k_samples`` completions per example from the weak model.

    Output order is (example order, sample index). Completions with no
    extractable SQL are logged and skipped.
    """
    prompts = _PromptCache(db_root, sample_rows)
    model = source_model or endpoint.model
    jobs = [(ex, j) for ex in examples for j in range(k_samples)]
    prompt_text = {ex.id: prompts.prompt(ex) for ex in examples}

    def run(job: tuple[Example, int]) -> str:
        ex, j = job
        payload = chat_payload(prompt_text[ex.id], endpoint.model, temperature=temperature,
                               max_tokens=max_tokens, seed=seed * 1_000_003 + ex.id * k_samples + j)
        return complete(endpoint, payload, client)

    with endpoint.client() as client, ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        completions = list(pool.map(run, jobs))

    out: list[Candidate] = []
    for (ex, j), text in zip(jobs, completions):
        sql = extract_sql(text)
        if not sql:
            log.warning("example %d sample %d: no SQL in completion", ex.id, j)
            continue
        out.append(Candidate(ex.id, sql, model))
    return out


__all__ = [
    "DEFAULT_K_SAMPLES",
    "POLICIES",
    "Label",
    "LabeledCandidate",
    "PreferenceLabel",
    "Reason",
    "build_preference_dataset",
    "extract_sql",
    "generate_candidates",
    "label_candidate",
    "label_candidates",
    "pair_labeled",
]
