"""Lexicon-guided terminology injection around a pluggable translator."""

from __future__ import annotations

import enum
import io
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    AlignmentError,
    ConflictingEntry,
    DoubleInjection,
    MalformedLine,
    SentinelLost,
    TranslatorFailure,
)
from .textlang import ScriptClass, TokenSequence

Translator = Callable[[str], str]

SENTINEL_OPEN = "\ue000"
SENTINEL_CLOSE = "\ue001"
_SENTINEL = re.compile(f"{SENTINEL_OPEN}(\\d+){SENTINEL_CLOSE}")

# letters, digits and Devanagari combining marks; hyphen/apostrophe join word parts
_WORD = re.compile(r"(?:[^\W_]|[\u0900-\u097F\uA8E0-\uA8FF])+(?:['\u2019-](?:[^\W_]|[\u0900-\u097F])+)*")


def normalize_term(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class LexiconEntry:
    source_term: str
    target_term: str

    def __post_init__(self):
        if not self.source_term or self.source_term != normalize_term(self.source_term):
            raise ValueError(f"source term {self.source_term!r} is not normalised")
        if not self.target_term.strip():
            raise ValueError("empty target term")

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(self.source_term.split(" "))


_END = object()


class Lexicon:
    """Bilingual term store with a word-level trie for longest match."""

    def __init__(self, entries: Iterable[LexiconEntry] = ()):
        self._entries: dict[str, LexiconEntry] = {}
        self._targets: dict[str, str] = {}
        self._trie: dict = {}
        for e in entries:
            self.add(e)

    def add(self, entry: LexiconEntry) -> None:
        have = self._entries.get(entry.source_term)
        if have is not None:
            if have.target_term != entry.target_term:
                raise ConflictingEntry(entry.source_term, have.target_term, entry.target_term, 0, 0)
            return
        other = self._targets.get(entry.target_term)
        if other is not None:
            raise ConflictingEntry(entry.target_term, other, entry.source_term, 0, 0)
        self._entries[entry.source_term] = entry
        self._targets[entry.target_term] = entry.source_term
        node = self._trie
        for w in entry.words:
            node = node.setdefault(w, {})
        node[_END] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, source: str) -> bool:
        return normalize_term(source) in self._entries

    def __getitem__(self, source: str) -> LexiconEntry:
        return self._entries[normalize_term(source)]

    def entries(self) -> list[LexiconEntry]:
        return sorted(self._entries.values(), key=lambda e: e.source_term)

    def reversed(self) -> "Lexicon":
        """Target-to-source lexicon (used for round-trip checks)."""
        return Lexicon(LexiconEntry(normalize_term(e.target_term), e.source_term)
                       for e in self._entries.values())

    def longest_from(self, words: Sequence[str], start: int) -> tuple[int, LexiconEntry | None]:
        node, best, best_end = self._trie, None, start
        for j in range(start, len(words)):
            node = node.get(words[j])
            if node is None:
                break
            if _END in node:
                best, best_end = node[_END], j + 1
        return best_end, best


def load_lexicon(stream: TextIO | str | Iterable[str]) -> Lexicon:
    """Read ``source<TAB>target`` lines; ``#`` comments and blank lines skipped."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lex = Lexicon()
    first_seen: dict[str, tuple[str, int]] = {}
    target_seen: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
            raise MalformedLine(lineno, line)
        source, target = normalize_term(fields[0]), fields[1].strip()
        if source in first_seen:
            have, at = first_seen[source]
            if have != target:
                raise ConflictingEntry(source, have, target, lineno, at)
            continue
        if target in target_seen:
            have, at = target_seen[target]
            raise ConflictingEntry(target, have, source, lineno, at)
        first_seen[source] = (target, lineno)
        target_seen[target] = (source, lineno)
        lex.add(LexiconEntry(source, target))
    return lex


@dataclass(frozen=True)
class Word:
    text: str
    start: int
    end: int


def words_of(text: str) -> list[Word]:
    return [Word(m.group(), m.start(), m.end()) for m in _WORD.finditer(text)]


@dataclass(frozen=True)
class ProtectedSpan:
    start: int          # word offsets, end exclusive
    end: int
    char_start: int
    char_end: int
    entry: LexiconEntry
    sentinel: int


def longest_match_spans(text: str, lex: Lexicon) -> list[ProtectedSpan]:
    """Greedy left-to-right longest match over words.

    Words of a multi-word match must be separated by whitespace only, so
    ``"heart, attack"`` never matches ``heart attack``.
    """
    ws = words_of(text)
    norm = [w.text.lower() for w in ws]
    spans: list[ProtectedSpan] = []
    i = 0
    while i < len(ws):
        end, entry = _longest_contiguous(lex, ws, norm, i, text)
        if entry is None:
            i += 1
            continue
        spans.append(ProtectedSpan(i, end, ws[i].start, ws[end - 1].end, entry, len(spans)))
        i = end
    return spans


def _longest_contiguous(lex, ws, norm, i, text):
    # cut the candidate window at the first non-whitespace separator
    j = i + 1
    while j < len(ws) and not text[ws[j - 1].end:ws[j].start].strip():
        j += 1
    end, entry = lex.longest_from(norm[:j], i)
    return end, entry


class InjectMode(enum.Enum):
    PARENTHETICAL = "parenthetical"
    REPLACE_ONLY = "replace"


def _replacement(entry: LexiconEntry, mode: InjectMode) -> str:
    if mode is InjectMode.PARENTHETICAL:
        return f"{entry.target_term} ({entry.source_term})"
    return entry.target_term


def _check_spans(text: str, spans: Sequence[ProtectedSpan]) -> None:
    last = 0
    for s in spans:
        if not (last <= s.char_start < s.char_end <= len(text)):
            raise AlignmentError(f"span {s.char_start}:{s.char_end} does not fit the text")
        if normalize_term(text[s.char_start:s.char_end]) != s.entry.source_term:
            raise AlignmentError(f"span {s.char_start}:{s.char_end} no longer covers "
                                 f"{s.entry.source_term!r}")
        last = s.char_end


def inject_terms(text: str, spans: Sequence[ProtectedSpan],
                 mode: InjectMode = InjectMode.PARENTHETICAL) -> str:
    _check_spans(text, spans)
    out, last = [], 0
    for s in spans:
        out.append(text[last:s.char_start])
        out.append(_replacement(s.entry, mode))
        last = s.char_end
    out.append(text[last:])
    return "".join(out)


def sentinel(idx: int) -> str:
    return f"{SENTINEL_OPEN}{idx}{SENTINEL_CLOSE}"


def _already_injected(text: str, span: ProtectedSpan) -> bool:
    before = text[:span.char_start].rstrip()
    after = text[span.char_end:].lstrip()
    return (before.endswith("(") and after.startswith(")")
            and before[:-1].rstrip().endswith(span.entry.target_term))


def protect_translate_restore(text: str, lex: Lexicon, translate: Translator) -> str:
    """Shield lexicon terms behind sentinels, translate, then restore them.

    Restored terms take the parenthetical form ``target (source)``.
    """
    spans = longest_match_spans(text, lex)
    for s in spans:
        if _already_injected(text, s):
            raise DoubleInjection(f"{s.entry.source_term!r} is already injected at {s.char_start}")
    out, last = [], 0
    for s in spans:
        out.append(text[last:s.char_start])
        out.append(sentinel(s.sentinel))
        last = s.char_end
    out.append(text[last:])
    shielded = "".join(out)
    try:
        translated = translate(shielded)
    except Exception as exc:
        raise TranslatorFailure(f"translator raised {type(exc).__name__}: {exc}") from exc
    if not isinstance(translated, str):
        raise TranslatorFailure(f"translator returned {type(translated).__name__}, not text")
    found = [int(m.group(1)) for m in _SENTINEL.finditer(translated)]
    for s in spans:
        n = found.count(s.sentinel)
        if n == 0:
            raise SentinelLost(sentinel(s.sentinel))
        if n > 1:
            raise TranslatorFailure(f"sentinel {s.sentinel} duplicated by translator")
    if len(found) != len(spans):
        raise TranslatorFailure("translator introduced unknown sentinels")
    by_id = {s.sentinel: s for s in spans}
    return _SENTINEL.sub(
        lambda m: _replacement(by_id[int(m.group(1))].entry, InjectMode.PARENTHETICAL), translated)


def identity_translator(text: str) -> str:
    return text


def translate_mcq(item, lex: Lexicon, translate: Translator = identity_translator):
    """Process stem and options independently; labels, order, gold and id kept.

    Raises on any component failure; the input item is never modified.
    """
    from .evaluation import McqItem

    question = protect_translate_restore(item.question, lex, translate)
    options = {label: protect_translate_restore(text, lex, translate)
               for label, text in item.options.items()}
    return McqItem(id=item.id, question=question, options=options, gold=item.gold,
                   language=item.language, system=item.system)


def term_mask(seq: TokenSequence) -> np.ndarray:
    """0 on injected ``( english term )`` parentheticals, 1 elsewhere.

    A parenthetical qualifies when everything between the brackets is
    Latin-script; the brackets themselves are masked too.
    """
    toks = list(seq)
    mask = np.ones(len(toks))
    i = 0
    while i < len(toks):
        if toks[i].surface == "(":
            j = i + 1
            while j < len(toks) and toks[j].script is ScriptClass.LATIN:
                j += 1
            if j > i + 1 and j < len(toks) and toks[j].surface == ")":
                mask[i:j + 1] = 0.0
                i = j + 1
                continue
        i += 1
    return mask
