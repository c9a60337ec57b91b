"""Reference SFT and DPO objectives over externally supplied log-probabilities."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

from .errors import EmptySequenceError, NonFiniteInputError

DEFAULT_BETA = 0.2
STABLE_BRANCH = 30.0


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteInputError(f"{name} is not finite: {value!r}")
    return value


@dataclass(frozen=True)
class SequenceLogProbs:
    token_logprobs: tuple[float, ...]

    def __init__(self, token_logprobs: Sequence[float]) -> None:
        values = tuple(_finite(f"token_logprobs[{i}]", v) for i, v in enumerate(token_logprobs))
        for i, v in enumerate(values):
            if v > 0:
                raise ValueError(f"token_logprobs[{i}] = {v} is a positive log-probability")
        object.__setattr__(self, "token_logprobs", values)

    def __len__(self) -> int:
        return len(self.token_logprobs)


@dataclass(frozen=True)
class DpoInputs:
    """Sequence-summed log-probs of the chosen (w) and rejected (l) responses.

    ``len_w``/``len_l`` are token counts, needed only for length normalization.
    """

    logp_theta_w: float
    logp_ref_w: float
    logp_theta_l: float
    logp_ref_l: float
    beta: float = DEFAULT_BETA
    len_w: int | None = None
    len_l: int | None = None

    def __post_init__(self) -> None:
        for name in ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l", "beta"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        for name in ("len_w", "len_l"):
            n = getattr(self, name)
            if n is not None and (isinstance(n, bool) or not isinstance(n, int) or n < 1):
                raise ValueError(f"{name} must be a positive integer, got {n!r}")

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> DpoInputs:
        known = ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l", "beta", "len_w", "len_l")
        missing = [k for k in known[:4] if k not in rec]
        if missing:
            raise KeyError(missing[0])
        return cls(**{k: rec[k] for k in known if k in rec})

    def swapped(self) -> DpoInputs:
        return DpoInputs(self.logp_theta_l, self.logp_ref_l, self.logp_theta_w, self.logp_ref_w,
                         self.beta, self.len_l, self.len_w)


def sft_loss(seq: SequenceLogProbs, mean: bool = False) -> float:
    """Negative log-likelihood of one target sequence; per-token mean if ``mean``."""
    if not len(seq):
        raise EmptySequenceError("sft_loss needs at least one token")
    total = -math.fsum(seq.token_logprobs)
    return total / len(seq) if mean else total


def _scales(inputs: DpoInputs, length_normalize: bool) -> tuple[float, float]:
    if not length_normalize:
        return 1.0, 1.0
    if inputs.len_w is None or inputs.len_l is None:
        raise ValueError("length normalization needs len_w and len_l")
    return 1.0 / inputs.len_w, 1.0 / inputs.len_l


def dpo_margin(inputs: DpoInputs, length_normalize: bool = False) -> float:
    sw, sl = _scales(inputs, length_normalize)
    chosen = (inputs.logp_theta_w - inputs.logp_ref_w) * sw
    rejected = (inputs.logp_theta_l - inputs.logp_ref_l) * sl
    return inputs.beta * (chosen - rejected)


def neg_log_sigmoid(m: float) -> float:
    """``-log(sigmoid(m)) = log(1 + exp(-m))`` without overflow."""
    if m > STABLE_BRANCH:
        return math.exp(-m)
    if m < -STABLE_BRANCH:
        return -m + math.exp(m)
    return math.log1p(math.exp(-m))


def sigmoid(m: float) -> float:
    if m >= 0:
        return 1.0 / (1.0 + math.exp(-m))
    e = math.exp(m)
    return e / (1.0 + e)


def dpo_loss(inputs: DpoInputs, length_normalize: bool = False) -> float:
    return neg_log_sigmoid(dpo_margin(inputs, length_normalize))


@dataclass(frozen=True)
class DpoGradients:
    logp_theta_w: float
    logp_ref_w: float
    logp_theta_l: float
    logp_ref_l: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.logp_theta_w, self.logp_ref_w, self.logp_theta_l, self.logp_ref_l)


def dpo_gradients(inputs: DpoInputs, length_normalize: bool = False) -> DpoGradients:
    """Analytic partial derivatives of :func:`dpo_loss` wrt the four log-probs."""
    sw, sl = _scales(inputs, length_normalize)
    g = inputs.beta * sigmoid(-dpo_margin(inputs, length_normalize))
    return DpoGradients(-g * sw, g * sw, g * sl, -g * sl)


_FIELDS = ("logp_theta_w", "logp_ref_w", "logp_theta_l", "logp_ref_l")


def dpo_gradient_check(inputs: DpoInputs, h: float = 1e-5, length_normalize: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error of each partial is ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    if not 0 < h <= 1e-3:
        raise ValueError(f"h must be in (0, 1e-3], got {h}")
    analytic = dpo_gradients(inputs, length_normalize).as_tuple()
    base = {f: getattr(inputs, f) for f in _FIELDS}
    worst = 0.0
    for field, a in zip(_FIELDS, analytic):
        up = DpoInputs(**{**base, field: base[field] + h}, beta=inputs.beta, len_w=inputs.len_w, len_l=inputs.len_l)
        down = DpoInputs(**{**base, field: base[field] - h}, beta=inputs.beta, len_w=inputs.len_w, len_l=inputs.len_l)
        numeric = (dpo_loss(up, length_normalize) - dpo_loss(down, length_normalize)) / (2 * h)
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-12))
    return worst
