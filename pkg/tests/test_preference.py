import hashlib
import json

import httpx
import pytest
from conftest import FIXTURES
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_force_pair_count, manual_verdict

from sense_forge.dataset import Candidate, Example, read_candidates, read_examples
from sense_forge.errors import GoldExecutionFailedError, MissingDatabaseError
from sense_forge.llm import Endpoint
from sense_forge.preference import (
    POSITIVE,
    Label,
    LabeledCandidate,
    PreferenceLabel,
    Reason,
    build_preference_dataset,
    extract_sql,
    generate_candidates,
    label_candidate,
    label_candidates,
    pair_labeled,
)

COUNT = Example(0, "school", "How many students are there?", "SELECT count(*) FROM list")
RUNAWAY = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c"


@pytest.mark.parametrize("sql, label", [
    ("SELECT count(*) FROM list", PreferenceLabel(Label.POSITIVE, Reason.EXEC_MATCH)),
    ("select COUNT(LastName) from list", PreferenceLabel(Label.POSITIVE, Reason.EXEC_MATCH)),
    ("SELECT count(*) FROM list WHERE Grade = 2", PreferenceLabel(Label.NEGATIVE, Reason.EXEC_MISMATCH)),
    ("SELCT count(*) FROM list", PreferenceLabel(Label.NEGATIVE, Reason.EXEC_ERROR)),
    ("DELETE FROM list", PreferenceLabel(Label.NEGATIVE, Reason.EXEC_ERROR)),
    (RUNAWAY, PreferenceLabel(Label.NEGATIVE, Reason.TIMEOUT)),
])
def test_single_labels(db_root, sql, label):
    assert label_candidate(COUNT, Candidate(0, sql, "m"), db_root, timeout_ms=200) == label


def test_label_invariants(db_root):
    with pytest.raises(ValueError):
        PreferenceLabel(Label.POSITIVE, Reason.TIMEOUT)
    with pytest.raises(ValueError):
        PreferenceLabel(Label.NEGATIVE, Reason.EXEC_MATCH)
    with pytest.raises(ValueError):
        label_candidate(COUNT, Candidate(1, "SELECT 1", "m"), db_root)


def test_broken_gold_and_missing_database(db_root, tmp_path):
    with pytest.raises(GoldExecutionFailedError):
        label_candidate(Example(0, "school", "q", "SELECT nope FROM list"), Candidate(0, "SELECT 1", "m"), db_root)
    with pytest.raises(MissingDatabaseError):
        label_candidate(COUNT, Candidate(0, "SELECT 1", "m"), tmp_path)


def labeled(*flags):
    neg = PreferenceLabel(Label.NEGATIVE, Reason.EXEC_MISMATCH)
    return [LabeledCandidate(Candidate(0, f"SELECT {i}", f"m{i}"), POSITIVE if f else neg) for i, f in enumerate(flags)]


def test_gold_backstop_when_no_positive():
    pairs = pair_labeled(COUNT, labeled(False, False), "p")
    assert [(p.chosen, p.rejected, p.chosen_source) for p in pairs] == [
        (COUNT.gold_sql, "SELECT 0", "gold"), (COUNT.gold_sql, "SELECT 1", "gold")]
    assert pairs[0].meta == {"rejected_reason": "exec_mismatch", "rejected_model": "m0"}


def test_first_positive_is_chosen():
    pairs = pair_labeled(COUNT, labeled(False, True, True, False), "p")
    assert [(p.chosen, p.rejected, p.chosen_source) for p in pairs] == [
        ("SELECT 1", "SELECT 0", "weak_model"), ("SELECT 1", "SELECT 3", "weak_model")]
    assert pairs[0].meta["chosen_model"] == "m1"


def test_weak_vs_weak_needs_a_positive():
    assert pair_labeled(COUNT, labeled(False, False), "p", "weak_vs_weak") == []
    assert len(pair_labeled(COUNT, labeled(True, False), "p", "weak_vs_weak")) == 1
    with pytest.raises(ValueError):
        pair_labeled(COUNT, labeled(True), "p", "best_of_n")


@given(st.lists(st.booleans(), max_size=8), st.sampled_from(["gold_backstop", "weak_vs_weak"]))
def test_pair_count_matches_brute_force(flags, policy):
    assert len(pair_labeled(COUNT, labeled(*flags), "p", policy)) == brute_force_pair_count(flags, policy)


LAB_GOLD = read_examples(FIXTURES / "labeling_gold.jsonl")
LAB_CANDS = read_candidates(FIXTURES / "labeling_candidates.jsonl")


def oracle_flags(db_root):
    flags = {}
    by_id = {e.id: e for e in LAB_GOLD}
    for cand in LAB_CANDS:
        ex = by_id[cand.example_id]
        ok = cand.sql != RUNAWAY and manual_verdict(db_root / ex.db_id / f"{ex.db_id}.sqlite", cand.sql,
                                                     ex.gold_sql) == "match"
        flags.setdefault(ex.id, []).append(ok)
    return flags


@pytest.fixture(scope="module")
def fixture_labels(db_root):
    return label_candidates(LAB_GOLD, LAB_CANDS, db_root, timeout_ms=300, workers=4)


def test_fifty_example_labels_agree_with_oracle(db_root, fixture_labels):
    flags = oracle_flags(db_root)
    got = {i: [lc.label.positive for lc in lcs] for i, lcs in fixture_labels.items()}
    assert got == flags
    reasons = {lc.label.reason for lcs in fixture_labels.values() for lc in lcs}
    assert reasons == set(Reason)


@pytest.mark.parametrize("policy", ["gold_backstop", "weak_vs_weak"])
def test_fifty_example_pair_count(db_root, policy):
    flags = oracle_flags(db_root)
    expected = sum(brute_force_pair_count(f, policy) for f in flags.values())
    pairs = build_preference_dataset(LAB_GOLD, LAB_CANDS, db_root, timeout_ms=300, policy=policy, workers=4)
    assert len(pairs) == expected
    assert [p.example_id for p in pairs] == sorted(p.example_id for p in pairs)
    assert all(p.chosen != p.rejected for p in pairs)


def test_pairs_use_inference_prompt(db_root):
    pairs = build_preference_dataset([COUNT], [Candidate(0, "SELECT 1", "m")], db_root)
    assert pairs[0].prompt.endswith("Question: How many students are there?\n")
    assert 'CREATE TABLE "list"' in pairs[0].prompt


def test_all_positive_example_yields_nothing(db_root):
    assert build_preference_dataset([COUNT], [Candidate(0, COUNT.gold_sql, "m")], db_root) == []


@pytest.mark.parametrize("completion, sql", [
    ("SELECT 1", "SELECT 1"),
    ("SELECT 1;", "SELECT 1"),
    ("```sql\nSELECT a FROM t;\n```", "SELECT a FROM t"),
    ("Here you go:\n```\nselect a from t\n```\nDone.", "select a from t"),
    ("The answer is:\nSELECT name FROM venue; -- best", "SELECT name FROM venue"),
    ("with x as (select 1) select * from x", "with x as (select 1) select * from x"),
    ("Sure! SELECT count(*) FROM list", "SELECT count(*) FROM list"),
    ("SELECT 'a;b' FROM t; SELECT 2", "SELECT 'a;b' FROM t"),
    ("SELECT a -- trailing; comment\nFROM t;", "SELECT a -- trailing; comment\nFROM t"),
    ("", ""),
])
def test_extract_sql(completion, sql):
    assert extract_sql(completion) == sql


def stub(answer=lambda body: "```sql\nSELECT count(*) FROM list;\n```"):
    bodies = []

    def handler(request):
        body = json.loads(request.content)
        bodies.append(body)
        return httpx.Response(200, json={"choices": [{"message": {"content": answer(body)}}]})

    ep = Endpoint("http://stub/v1", model="weak", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    return ep, bodies


def test_generate_k_per_example(db_root):
    examples = [Example(i, "school", f"question {i}", "SELECT count(*) FROM list") for i in range(10)]
    ep, bodies = stub()
    cands = generate_candidates(ep, examples, db_root, k_samples=3, temperature=0.7, seed=1, concurrency=4)
    assert len(cands) == 30
    assert [c.example_id for c in cands] == [i for i in range(10) for _ in range(3)]
    assert {c.source_model for c in cands} == {"weak"}
    assert len({b["seed"] for b in bodies}) == 30 and {b["temperature"] for b in bodies} == {0.7}


def test_empty_completions_skipped(db_root):
    ep, _ = stub(lambda body: "" if body["seed"] % 2 else "SELECT 1")
    cands = generate_candidates(ep, [COUNT], db_root, k_samples=4)
    assert len(cands) == 2


def test_closed_loop(db_root, tmp_path):
    """Stubbed weak model, then labels, then pairs, then a stable file digest."""
    from sense_forge.dataset import write_preference_pairs

    def answer(body):
        return "SELECT count(*) FROM list" if body["seed"] % 3 == 0 else "SELECT 11"

    digests = []
    for run in range(2):
        ep, _ = stub(answer)
        examples = [COUNT, Example(1, "school", "How many grades?", "SELECT count(DISTINCT Grade) FROM list")]
        cands = generate_candidates(ep, examples, db_root, k_samples=3, concurrency=3 - run)
        pairs = build_preference_dataset(examples, cands, db_root)
        out = tmp_path / f"pairs{run}.jsonl"
        write_preference_pairs(pairs, out)
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    assert digests[0] == digests[1]
    # example 0: seed 0 answers correctly; example 1 has 5 distinct grades, so all three miss
    sources = [p.chosen_source for p in pairs]
    assert sources == ["weak_model", "weak_model", "gold", "gold", "gold"]
