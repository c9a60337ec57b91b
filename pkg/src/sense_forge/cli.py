"""``sense-forge`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
Diagnostics go to stderr; data goes to stdout or the ``--out`` files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from . import version_info, versions
from .dataset import (
    INCOMPLETE_SUFFIX,
    Example,
    StrongDataset,
    dumps_record,
    iter_records,
    read_candidates,
    read_examples,
    read_predictions,
    read_synth_points,
    write_candidates,
    write_jsonl,
    write_preference_pairs,
    write_synth_points,
)
from .errors import DatasetParseError, MissingFieldError, SenseForgeError
from .executor import DEFAULT_TIMEOUT_MS
from .hardness import HardnessLevel
from .llm import API_KEY_ENV, Endpoint
from .losses import DpoInputs, SequenceLogProbs, dpo_loss, dpo_margin, sft_loss
from .metrics import (
    MetricsReport,
    ex_accuracy,
    hardness_of,
    report_by_hardness,
    ts_accuracy,
)
from .preference import (
    DEFAULT_K_SAMPLES,
    POLICIES,
    build_preference_dataset,
    generate_candidates,
)
from .preference import DEFAULT_TEMPERATURE as CANDIDATE_TEMPERATURE
from .prompts import DEFAULT_SAMPLE_ROWS, example_as_datapoint, prompt_for_database
from .schema import DEFAULT_MERGE_THRESHOLD, database_path, introspect_schema
from .synth import DEFAULT_MAX_TOKENS, dataset_stats, synthesize
from .synth import DEFAULT_TEMPERATURE as SYNTH_TEMPERATURE
from .testsuite import DEFAULT_N_VARIANTS, generate_test_suite

log = logging.getLogger("sense_forge")


class ConfigError(Exception):
    """Bad flags or unusable input paths; exit code 2."""


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False)


def _setup_logging(json_logs: bool, verbose: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("sense_forge")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def _non_negative_int(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return n


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--timeout-ms", type=_positive_int, default=DEFAULT_TIMEOUT_MS,
                        help=f"per-query execution timeout (default {DEFAULT_TIMEOUT_MS})")
    common.add_argument("--concurrency", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker pool size (default: logical cores)")
    common.add_argument("--scratch-dir", type=Path, help="where intermediate files may be written")
    common.add_argument("--log-json", action="store_true", help="structured JSON log lines on stderr")
    common.add_argument("-v", "--verbose", action="count", default=0)

    # the raw formatter keeps --version on one line whatever the terminal width
    parser = argparse.ArgumentParser(prog="sense-forge", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=version_info())
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("render-prompt", parents=[common], help="print the inference prompt for one question")
    p.add_argument("--db-root", type=Path, required=True)
    p.add_argument("--db-id", help="database to render against (with --question)")
    p.add_argument("--question")
    p.add_argument("--knowledge", help="external knowledge line")
    p.add_argument("--gold", type=Path, help="take db_id, question and knowledge from this JSONL")
    p.add_argument("--id", type=int, dest="example_id", help="example id within --gold")
    p.add_argument("--rows", type=_non_negative_int, default=DEFAULT_SAMPLE_ROWS,
                   help=f"sample rows per table (default {DEFAULT_SAMPLE_ROWS})")
    p.set_defaults(handler=_cmd_render_prompt)

    def endpoint_flags(p: argparse.ArgumentParser, temperature: float) -> None:
        p.add_argument("--endpoint", required=True, help=f"chat-completion URL; key read from ${API_KEY_ENV}")
        p.add_argument("--model", required=True, help="model name sent in the request")
        p.add_argument("--temperature", type=float, default=temperature)
        p.add_argument("--max-tokens", type=_positive_int, default=DEFAULT_MAX_TOKENS)
        p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize strong datapoints with a strong LLM")
    endpoint_flags(p, SYNTH_TEMPERATURE)
    p.add_argument("--level", choices=("easy", "medium", "hard", "mix"), default="mix")
    p.add_argument("--n", type=_non_negative_int, required=True)
    p.add_argument("--rejects", type=Path, required=True)
    p.add_argument("--few-shot", type=Path, help="demonstration datapoints (JSONL)")
    p.add_argument("--gold", type=Path, help="human examples used as demonstrations (needs --db-root)")
    p.add_argument("--db-root", type=Path)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("gen-candidates", parents=[common], help="sample candidate SQL from a weak model")
    endpoint_flags(p, CANDIDATE_TEMPERATURE)
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--db-root", type=Path, required=True)
    p.add_argument("--k-samples", type=_positive_int, default=DEFAULT_K_SAMPLES)
    p.set_defaults(handler=_cmd_gen_candidates)

    p = sub.add_parser("label", parents=[common], help="label candidates by execution and emit preference pairs")
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--candidates", type=Path, required=True)
    p.add_argument("--db-root", type=Path, required=True)
    p.add_argument("--policy", choices=POLICIES, default="gold_backstop")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_label)

    p = sub.add_parser("eval", parents=[common], help="execution (ex) or test-suite (ts) accuracy")
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--db-root", type=Path, required=True)
    p.add_argument("--metric", choices=("ex", "ts"), default="ex")
    p.add_argument("--suite-size", type=_non_negative_int, default=DEFAULT_N_VARIANTS,
                   help=f"perturbed variants per database for ts (default {DEFAULT_N_VARIANTS})")
    p.add_argument("--resample-rows", action="store_true", help="ts variants also drop and duplicate rows")
    p.add_argument("--column-permutations", action="store_true", help="accept results whose columns are permuted")
    p.add_argument("--out", type=Path, help="report JSON (default: stdout)")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("stats", parents=[common], help="dataset statistics and domain density")
    p.add_argument("--gold", type=Path, help="human examples (JSONL)")
    p.add_argument("--synth", type=Path, help="synthesized datapoints (JSONL)")
    p.add_argument("--db-root", type=Path, help="databases of the human examples, for schema merging")
    p.add_argument("--merge-threshold", type=float, default=DEFAULT_MERGE_THRESHOLD)
    p.add_argument("--name", default="dataset", help="row label in the printed table")
    p.add_argument("--out", type=Path, help="statistics JSON")
    p.set_defaults(handler=_cmd_stats)

    p = sub.add_parser("loss", parents=[common], help="recompute SFT/DPO losses from logged log-probs")
    p.add_argument("input", type=Path, help="JSONL of DPO inputs or {token_logprobs: [...]}")
    p.add_argument("--beta", type=float, help="beta for records that carry none")
    p.add_argument("--length-normalize", action="store_true", help="divide DPO log-ratios by len_w / len_l")
    p.add_argument("--mean-tokens", action="store_true", help="SFT loss as a per-token mean")
    p.add_argument("--out", type=Path, help="JSONL of losses (default: stdout)")
    p.set_defaults(handler=_cmd_loss)
    return parser


def _check_paths(args: argparse.Namespace) -> None:
    for name in ("gold", "pred", "candidates", "few_shot", "synth", "input"):
        path = getattr(args, name, None)
        if path is not None and not path.is_file():
            raise ConfigError(f"--{name.replace('_', '-')}: no such file: {path}")
    root = getattr(args, "db_root", None)
    if root is not None and not root.is_dir():
        raise ConfigError(f"--db-root: not a directory: {root}")
    for name in ("out", "rejects"):
        path = getattr(args, name, None)
        if path is not None and not path.resolve().parent.is_dir():
            raise ConfigError(f"--{name}: directory does not exist: {path.parent}")


def _write_text(path: Path, text: str) -> None:
    partial = path.with_name(path.name + INCOMPLETE_SUFFIX)
    with open(partial, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(partial, path)


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def _endpoint(args: argparse.Namespace) -> Endpoint:
    return Endpoint.from_env(args.endpoint, model=args.model)


# -- subcommands -------------------------------------------------------------

def _cmd_render_prompt(args: argparse.Namespace) -> int:
    if args.gold is not None:
        if args.example_id is None:
            raise ConfigError("--gold needs --id")
        matches = [e for e in read_examples(args.gold) if e.id == args.example_id]
        if not matches:
            raise ConfigError(f"--id {args.example_id}: no such example in {args.gold}")
        db_id, question, knowledge = matches[0].db_id, matches[0].question, matches[0].knowledge
    else:
        if args.db_id is None or args.question is None:
            raise ConfigError("give either --gold and --id, or --db-id and --question")
        db_id, question, knowledge = args.db_id, args.question, args.knowledge
    path = database_path(args.db_root, db_id)
    if not path.is_file():
        raise ConfigError(f"no database for {db_id!r} at {path}")
    sys.stdout.write(prompt_for_database(path, question, knowledge, k=args.rows).text)
    return 0


def _demo_level(example: Example) -> str:
    level = hardness_of(example.gold_sql)
    return {HardnessLevel.EASY: "easy", HardnessLevel.MEDIUM: "medium"}.get(level, "hard")


def _cmd_synth(args: argparse.Namespace) -> int:
    demos = list(read_synth_points(args.few_shot)) if args.few_shot else []
    if args.gold is not None:
        if args.db_root is None:
            raise ConfigError("--gold demonstrations need --db-root")
        schemas: dict[str, Any] = {}
        for ex in read_examples(args.gold):
            if ex.db_id not in schemas:
                schemas[ex.db_id] = introspect_schema(database_path(args.db_root, ex.db_id), ex.db_id)
            demos.append(example_as_datapoint(ex, schemas[ex.db_id], _demo_level(ex)))
    if len(demos) < 2:
        raise ConfigError("synthesis needs at least two demonstrations (--few-shot and/or --gold)")
    outcome = synthesize(_endpoint(args), demos, args.n, args.level, args.seed,
                         temperature=args.temperature, max_tokens=args.max_tokens,
                         concurrency=args.concurrency, timeout_ms=args.timeout_ms)
    write_synth_points(outcome.accepted, args.out)
    write_jsonl(outcome.rejected, args.rejects)
    log.warning("synth: %d accepted (%d with empty results), %d rejected",
                len(outcome.accepted), outcome.empty_results, len(outcome.rejected))
    return 0


def _cmd_gen_candidates(args: argparse.Namespace) -> int:
    examples = read_examples(args.gold)
    candidates = generate_candidates(_endpoint(args), examples, args.db_root, args.k_samples, args.temperature,
                                     args.seed, max_tokens=args.max_tokens, concurrency=args.concurrency)
    write_candidates(candidates, args.out)
    log.info("gen-candidates: %d candidates for %d examples", len(candidates), len(examples))
    return 0


def _cmd_label(args: argparse.Namespace) -> int:
    examples = read_examples(args.gold)
    candidates = read_candidates(args.candidates)
    pairs = build_preference_dataset(examples, candidates, args.db_root, args.timeout_ms, args.policy,
                                     workers=args.concurrency)
    write_preference_pairs(pairs, args.out)
    log.info("label: %d pairs from %d candidates", len(pairs), len(candidates))
    return 0


def _run_eval(args: argparse.Namespace, examples: list[Example], scratch: Path) -> MetricsReport:
    predictions = read_predictions(args.pred)
    if args.metric == "ex":
        return ex_accuracy(examples, predictions, args.db_root, args.timeout_ms, workers=args.concurrency,
                           column_permutations=args.column_permutations)
    suites = {}
    for db_id in sorted({e.db_id for e in examples}):
        path = database_path(args.db_root, db_id)
        if not path.is_file():
            continue  # ts_accuracy reports the missing database
        suites[db_id] = generate_test_suite(path, args.suite_size, args.seed, scratch / "suites",
                                            resample_rows=args.resample_rows, db_id=db_id)
    return ts_accuracy(examples, predictions, suites, args.timeout_ms, workers=args.concurrency,
                       column_permutations=args.column_permutations)


def _cmd_eval(args: argparse.Namespace) -> int:
    examples = read_examples(args.gold)
    if args.scratch_dir is not None:
        args.scratch_dir.mkdir(parents=True, exist_ok=True)
        report = _run_eval(args, examples, args.scratch_dir)
    else:
        with tempfile.TemporaryDirectory(prefix="sense-forge-") as tmp:
            report = _run_eval(args, examples, Path(tmp))

    doc = report.to_json(versions())
    doc["config"] = {"metric": args.metric, "seed": args.seed, "timeout_ms": args.timeout_ms,
                     "column_permutations": args.column_permutations}
    if args.metric == "ts":
        doc["config"].update(suite_size=args.suite_size, resample_rows=args.resample_rows)
    if args.out is not None:
        _write_text(args.out, _dump_json(doc))
        sys.stdout.write(report_by_hardness(report))
    else:
        sys.stdout.write(_dump_json(doc))
    if report.gold_errors:
        for v in report.gold_errors:
            print(f"error: gold SQL of example {v.example_id} failed to execute: {v.verdict.message}",
                  file=sys.stderr)
        return 1
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    if args.gold is None and args.synth is None:
        raise ConfigError("stats needs --gold and/or --synth")
    human = read_examples(args.gold) if args.gold else []
    synthetic = read_synth_points(args.synth) if args.synth else []
    schemas = {}
    if args.db_root is not None:
        for db_id in sorted({e.db_id for e in human}):
            path = database_path(args.db_root, db_id)
            if path.is_file():
                schemas[db_id] = introspect_schema(path, db_id)
    stats = dataset_stats(StrongDataset(human, synthetic), args.merge_threshold, schemas)
    sys.stdout.write("Dataset & #Examples & #DB & #Examples/DB & Avg(#Tokens) & Avg(#JOIN)\n")
    sys.stdout.write(stats.table_row(args.name) + "\n")
    if args.out is not None:
        _write_text(args.out, _dump_json(stats.to_json()))
    return 0


def _loss_record(index: int, rec: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    if "token_logprobs" in rec:
        loss = sft_loss(SequenceLogProbs(rec["token_logprobs"]), mean=args.mean_tokens)
        return {"index": index, "kind": "sft", "loss": loss}
    if args.beta is not None and "beta" not in rec:
        rec = {**rec, "beta": args.beta}
    inputs = DpoInputs.from_record(rec)
    return {"index": index, "kind": "dpo", "margin": dpo_margin(inputs, args.length_normalize),
            "loss": dpo_loss(inputs, args.length_normalize)}


def _cmd_loss(args: argparse.Namespace) -> int:
    out = []
    for index, (lineno, rec) in enumerate(iter_records(args.input)):
        try:
            out.append(_loss_record(index, rec, args))
        except KeyError as exc:
            raise MissingFieldError(str(args.input), lineno, exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise DatasetParseError(str(args.input), lineno, str(exc)) from None
    text = "".join(dumps_record(r) + "\n" for r in out)
    if args.out is not None:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.log_json, args.verbose)
    try:
        _check_paths(args)
        return args.handler(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"sense-forge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except SenseForgeError as exc:
        print(f"sense-forge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print(f"sense-forge {args.command}: interrupted; unfinished outputs end in {INCOMPLETE_SUFFIX}",
              file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
