import json
import math
import random

import mpmath
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from oracles import summation_sft

from sense_forge.cli import main
from sense_forge.errors import EmptySequenceError, NonFiniteInputError
from sense_forge.losses import (
    STABLE_BRANCH,
    DpoInputs,
    SequenceLogProbs,
    dpo_gradient_check,
    dpo_gradients,
    dpo_loss,
    dpo_margin,
    neg_log_sigmoid,
    sft_loss,
)

mpmath.mp.dps = 50


def exact_neg_log_sigmoid(m):
    return float(mpmath.log1p(mpmath.exp(-mpmath.mpf(m))))


def at_margin(m, beta=0.2):
    return DpoInputs(m / beta, 0.0, 0.0, 0.0, beta)


def test_sft_examples():
    assert sft_loss(SequenceLogProbs([0.0, 0.0])) == 0.0
    assert sft_loss(SequenceLogProbs([-0.5, -0.5])) == 1.0
    assert sft_loss(SequenceLogProbs([-0.5, -1.5]), mean=True) == 1.0
    with pytest.raises(EmptySequenceError):
        sft_loss(SequenceLogProbs([]))


def test_sft_matches_summation_oracle():
    rng = random.Random(64)
    for _ in range(50):
        seq = [-rng.expovariate(0.3) for _ in range(64)]
        assert math.isclose(sft_loss(SequenceLogProbs(seq)), summation_sft(seq), rel_tol=1e-12)


@given(st.lists(st.floats(min_value=-50, max_value=0), min_size=1, max_size=40))
def test_sft_non_negative_and_zero_only_when_certain(seq):
    loss = sft_loss(SequenceLogProbs(seq))
    assert loss >= 0
    assert (loss == 0) == all(x == 0 for x in seq)


def test_invalid_log_probs_rejected():
    with pytest.raises(ValueError):
        SequenceLogProbs([0.1])
    with pytest.raises(NonFiniteInputError):
        SequenceLogProbs([float("-inf")])
    with pytest.raises(NonFiniteInputError):
        DpoInputs(float("nan"), 0, 0, 0)
    with pytest.raises(ValueError):
        DpoInputs(0, 0, 0, 0, beta=0)
    with pytest.raises(KeyError):
        DpoInputs.from_record({"logp_theta_w": 0, "logp_ref_w": 0, "logp_theta_l": 0})


def test_zero_margin_is_ln2():
    assert abs(dpo_loss(DpoInputs(-3.0, -3.0, -7.0, -7.0)) - math.log(2)) <= 1e-12


def test_worked_example():
    inputs = DpoInputs(-4.0, -5.0, -9.0, -8.0, beta=0.2)
    assert math.isclose(dpo_margin(inputs), 0.4, rel_tol=1e-12)
    assert abs(dpo_loss(inputs) - 0.513015) <= 1e-6
    assert math.isclose(dpo_loss(inputs), exact_neg_log_sigmoid(0.4), rel_tol=1e-15)


def test_extreme_margins_do_not_overflow():
    assert 0.0 <= dpo_loss(at_margin(700.0)) < 1e-300
    assert dpo_loss(at_margin(-700.0)) == pytest.approx(700.0, rel=1e-15)
    assert dpo_loss(at_margin(-1e6)) == pytest.approx(1e6)


@pytest.mark.parametrize("m", [-STABLE_BRANCH - 1e-9, -STABLE_BRANCH, -STABLE_BRANCH + 1e-9, -1.0, 0.0, 1e-8,
                               STABLE_BRANCH - 1e-9, STABLE_BRANCH, STABLE_BRANCH + 1e-9, 100.0, 700.0, -700.0])
def test_matches_arbitrary_precision(m):
    assert math.isclose(neg_log_sigmoid(m), exact_neg_log_sigmoid(m), rel_tol=1e-13, abs_tol=1e-300)


@given(st.floats(min_value=-800, max_value=800))
def test_matches_arbitrary_precision_everywhere(m):
    assert math.isclose(neg_log_sigmoid(m), exact_neg_log_sigmoid(m), rel_tol=1e-13, abs_tol=1e-300)


logp = st.floats(min_value=-60, max_value=0)
betas = st.floats(min_value=0.01, max_value=2.0)


@given(logp, logp, logp, logp, betas, st.floats(min_value=0.01, max_value=5))
def test_monotone_in_policy_log_probs(tw, rw, tl, rl, beta, step):
    base = DpoInputs(tw, rw, tl, rl, beta)
    m = dpo_margin(base)
    assume(abs(m) < 30)
    assert dpo_loss(DpoInputs(tw + step, rw, tl, rl, beta)) < dpo_loss(base)
    assert dpo_loss(DpoInputs(tw, rw, tl + step, rl, beta)) > dpo_loss(base)


@given(st.floats(min_value=-40, max_value=40))
def test_symmetric_pair_bounded_by_2ln2(m):
    total = neg_log_sigmoid(m) + neg_log_sigmoid(-m)
    assert total >= 2 * math.log(2) - 1e-15
    if m == 0:
        assert total == pytest.approx(2 * math.log(2), abs=1e-15)
    elif abs(m) > 1e-6:
        assert total > 2 * math.log(2)


@given(logp, logp, logp, logp, betas)
def test_swap_negates_margin(tw, rw, tl, rl, beta):
    inputs = DpoInputs(tw, rw, tl, rl, beta)
    assert dpo_margin(inputs.swapped()) == pytest.approx(-dpo_margin(inputs), abs=1e-12)


def test_gradient_at_zero_margin():
    grads = dpo_gradients(DpoInputs(-2.0, -2.0, -5.0, -5.0, beta=0.2))
    assert grads.as_tuple() == (-0.1, 0.1, 0.1, -0.1)
    doubled = dpo_gradients(DpoInputs(-2.0, -2.0, -5.0, -5.0, beta=0.4))
    assert doubled.as_tuple() == tuple(2 * g for g in grads.as_tuple())


def test_gradient_check_over_random_draws():
    rng = random.Random(7)
    worst = 0.0
    for _ in range(1000):
        inputs = DpoInputs(*(-rng.uniform(0, 40) for _ in range(4)), beta=rng.uniform(0.05, 1.0),
                           len_w=rng.randint(1, 50), len_l=rng.randint(1, 50))
        worst = max(worst, dpo_gradient_check(inputs), dpo_gradient_check(inputs, length_normalize=True))
    assert worst < 1e-6


def test_gradient_check_step_bounds():
    with pytest.raises(ValueError):
        dpo_gradient_check(DpoInputs(0, 0, 0, 0), h=0)
    with pytest.raises(ValueError):
        dpo_gradient_check(DpoInputs(0, 0, 0, 0), h=1e-2)


def test_length_normalization_divides_log_ratios():
    inputs = DpoInputs(-4.0, -2.0, -9.0, -3.0, beta=0.5, len_w=2, len_l=3)
    assert dpo_margin(inputs, length_normalize=True) == pytest.approx(0.5 * (-2.0 / 2 - -6.0 / 3))
    with pytest.raises(ValueError):
        dpo_margin(DpoInputs(0, 0, 0, 0), length_normalize=True)


def test_loss_subcommand(tmp_path, capsys):
    src = tmp_path / "lp.jsonl"
    src.write_text(
        json.dumps({"logp_theta_w": -4.0, "logp_ref_w": -5.0, "logp_theta_l": -9.0, "logp_ref_l": -8.0}) + "\n"
        + json.dumps({"token_logprobs": [-0.5, -0.5]}) + "\n"
    )
    assert main(["loss", str(src)]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert rows[0]["kind"] == "dpo" and rows[0]["loss"] == pytest.approx(0.513015, abs=1e-6)
    assert rows[1] == {"index": 1, "kind": "sft", "loss": 1.0}
    src.write_text('{"logp_theta_w": -1}\n')
    assert main(["loss", str(src)]) == 1
