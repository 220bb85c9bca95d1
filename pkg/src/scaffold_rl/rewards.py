"""Accuracy and language-form rewards for sampled responses."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .errors import InvalidLabel, VerifierUnavailable
from .policy import ANSWER_MARK, THINK_CLOSE, THINK_OPEN
from .textlang import Role, TokenSequence, hindi_fraction

ACC_LEVELS = (0.0, 0.1, 1.0)
NO_REASONING, WRONG, CORRECT = ACC_LEVELS
VERIFIER_THRESHOLD = 0.5


@dataclass(frozen=True)
class VerifierVerdict:
    correct: bool
    confidence: float


class Verifier(Protocol):
    def __call__(self, question: str, response: str, gold: str) -> VerifierVerdict: ...


@dataclass(frozen=True)
class RewardBundle:
    acc: float
    lan: float
    candidate_index: int


def detect_reasoning(seq: TokenSequence) -> bool:
    """True iff a single, closed, non-empty think block precedes any answer."""
    surfaces = [t.surface for t in seq.generated()]
    if surfaces.count(THINK_OPEN) != 1 or surfaces.count(THINK_CLOSE) != 1:
        return False
    i, j = surfaces.index(THINK_OPEN), surfaces.index(THINK_CLOSE)
    if j <= i + 1:
        return False
    if ANSWER_MARK in surfaces[:j]:
        return False
    return True


def exact_verifier(extracted: str, gold: str, options: Sequence[str] = "ABCDE") -> VerifierVerdict:
    if extracted not in options:
        raise InvalidLabel(f"label {extracted!r} not among options {list(options)}")
    if gold not in options:
        raise InvalidLabel(f"gold label {gold!r} not among options {list(options)}")
    ok = extracted == gold
    return VerifierVerdict(ok, 1.0 if ok else 0.0)


_FINAL_ANSWER = re.compile(r"Answer:\s*\(?([A-Z])\)?(?!\w)")


class ExactVerifier:
    """Contract adapter: parses the last ``Answer: X`` and compares exactly.

    A response without a parsable answer, or naming a label that is not
    an option, is judged incorrect with confidence 0.
    """

    def __init__(self, options: Sequence[str] = "ABCDE"):
        self.options = tuple(options)

    def __call__(self, question: str, response: str, gold: str) -> VerifierVerdict:
        if gold not in self.options:
            raise InvalidLabel(f"gold label {gold!r} not among options")
        found = _FINAL_ANSWER.findall(response)
        if not found or found[-1] not in self.options:
            return VerifierVerdict(False, 0.0)
        return exact_verifier(found[-1], gold, self.options)


def accuracy_reward(
    seq: TokenSequence,
    gold: str,
    verify: Verifier | Callable[[str, str, str], VerifierVerdict],
    question: str = "",
    threshold: float = VERIFIER_THRESHOLD,
) -> float:
    """Graded reward: 0 without reasoning, 0.1 if judged wrong, 1 if right."""
    if not detect_reasoning(seq):
        return NO_REASONING
    try:
        verdict = verify(question, seq.generated().text(), gold)
    except Exception as exc:
        raise VerifierUnavailable(f"verifier failed: {exc}") from exc
    if verdict is None or not 0.0 <= verdict.confidence <= 1.0:
        raise VerifierUnavailable(f"verifier returned an invalid verdict {verdict!r}")
    return CORRECT if verdict.confidence >= threshold else WRONG


def language_reward(seq: TokenSequence) -> float:
    """Hindi-token fraction over the whole generated sequence (no term mask)."""
    return hindi_fraction(seq)


def reasoning_hindi_fraction(seq: TokenSequence) -> float:
    """Hindi share of the reasoning segment only; 0 without one."""
    inner = [t for t in seq if t.role is Role.REASONING]
    if not inner:
        return 0.0
    return sum(t.is_hindi for t in inner) / len(inner)


def binary_accuracy(acc: float) -> float:
    """Collapse the graded reward to {0, 1} (reasoning-but-wrong becomes 0)."""
    return CORRECT if acc == CORRECT else 0.0


def binary_language(lan: float, threshold: float = 0.5) -> float:
    return 1.0 if lan >= threshold else 0.0
