"""Unicode script classification and the Hindi-token fraction of a response."""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptySequence, EmptyToken


class ScriptClass(enum.Enum):
    DEVANAGARI = "Devanagari"
    LATIN = "Latin"
    DIGIT = "Digit"
    PUNCT = "Punct"
    WHITESPACE = "Whitespace"
    OTHER = "Other"


class Role(enum.Enum):
    PROMPT = "Prompt"
    REASONING = "Reasoning"
    ANSWER = "Answer"
    DELIMITER = "Delimiter"


_DEVANAGARI_BLOCKS = ((0x0900, 0x097F), (0xA8E0, 0xA8FF))
_LATIN_RANGES = (
    (0x0041, 0x005A),
    (0x0061, 0x007A),
    (0x00C0, 0x024F),
    (0x1E00, 0x1EFF),
    (0x2C60, 0x2C7F),
    (0xA720, 0xA7FF),
)


def _in(cp: int, ranges) -> bool:
    return any(lo <= cp <= hi for lo, hi in ranges)


def classify_codepoint(cp: int | str) -> ScriptClass:
    """Classify one Unicode scalar value.

    Inside the Devanagari blocks, punctuation (danda, double danda) and
    digits are reported as ``PUNCT``/``DIGIT``; every other codepoint of
    the blocks (letters, vowel signs, virama, ...) is ``DEVANAGARI``.
    """
    if isinstance(cp, str):
        if len(cp) != 1:
            raise ValueError("expected a single character")
        cp = ord(cp)
    ch = chr(cp)
    cat = unicodedata.category(ch)
    if cat == "Nd":
        return ScriptClass.DIGIT
    if cat[0] == "P":
        return ScriptClass.PUNCT
    if _in(cp, _DEVANAGARI_BLOCKS):
        return ScriptClass.DEVANAGARI
    if ch.isspace() or cat in ("Zs", "Zl", "Zp"):
        return ScriptClass.WHITESPACE
    if _in(cp, _LATIN_RANGES) and cat[0] == "L":
        return ScriptClass.LATIN
    if cat in ("Sm", "Sc", "Sk"):
        return ScriptClass.PUNCT
    return ScriptClass.OTHER


def _is_letter(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "LM"


def classify_token(surface: str) -> ScriptClass:
    """Majority-of-letters script of a token.

    A token is Devanagari (resp. Latin) iff a strict majority of its letter
    codepoints are; with no letters at all, the first codepoint decides.
    """
    if not surface:
        raise EmptyToken("cannot classify an empty token")
    letters = [c for c in surface if _is_letter(c)]
    if not letters:
        return classify_codepoint(surface[0])
    n_dev = sum(classify_codepoint(c) is ScriptClass.DEVANAGARI for c in letters)
    n_lat = sum(classify_codepoint(c) is ScriptClass.LATIN for c in letters)
    if 2 * n_dev > len(letters):
        return ScriptClass.DEVANAGARI
    if 2 * n_lat > len(letters):
        return ScriptClass.LATIN
    return ScriptClass.OTHER


@dataclass(frozen=True)
class Token:
    surface: str
    id: int
    script: ScriptClass
    role: Role

    @classmethod
    def make(cls, surface: str, id: int, role: Role = Role.ANSWER) -> "Token":
        return cls(surface, id, classify_token(surface), role)

    @property
    def is_hindi(self) -> bool:
        return self.script is ScriptClass.DEVANAGARI


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]

    def __init__(self, tokens: Iterable[Token]):
        object.__setattr__(self, "tokens", tuple(tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.tokens]

    def generated(self) -> "TokenSequence":
        """View without prompt tokens."""
        return TokenSequence(t for t in self.tokens if t.role is not Role.PROMPT)

    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)


def hindi_fraction(seq: TokenSequence | Sequence[Token]) -> float:
    """Share of generated tokens whose script is Devanagari."""
    tokens = [t for t in seq if t.role is not Role.PROMPT]
    if not tokens:
        raise EmptySequence("hindi_fraction of an empty generated sequence")
    return sum(t.is_hindi for t in tokens) / len(tokens)


_SPLIT = re.compile(r"\s+")
_PAREN = re.compile(r"([()])")


def split_surfaces(text: str) -> list[str]:
    """Desk-scale tokenizer: whitespace split, parentheses detached."""
    out = []
    for chunk in _SPLIT.split(text.strip()):
        if not chunk:
            continue
        out.extend(p for p in _PAREN.split(chunk) if p)
    return out
