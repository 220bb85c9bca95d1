"""Zero-shot multiple-choice evaluation.

Answers are pulled out of free-form responses by a cascade that relaxes
step by step: strict answer patterns, then a bare option letter next to
an option delimiter, then token-overlap similarity against the option
texts.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyBenchmark, InvalidItem, PairingError

DEFAULT_RUNS = 3
SIMILARITY_THRESHOLD = 0.3
TAIL_TOKENS = 50
LABELS = "ABCDEFGHIJ"


@dataclass(frozen=True)
class McqItem:
    id: str
    question: str
    options: Mapping[str, str]
    gold: str
    language: str = "hi"
    system: str | None = None

    def __post_init__(self):
        labels = list(self.options)
        if len(labels) < 2:
            raise InvalidItem(f"{self.id}: need at least 2 options")
        if labels != list(LABELS[:len(labels)]):
            raise InvalidItem(f"{self.id}: option labels {labels} are not contiguous from A")
        if self.gold not in self.options:
            raise InvalidItem(f"{self.id}: gold {self.gold!r} is not an option label")
        if self.language not in ("hi", "en"):
            raise InvalidItem(f"{self.id}: language must be 'hi' or 'en'")
        object.__setattr__(self, "options", dict(self.options))

    @property
    def labels(self) -> list[str]:
        return list(self.options)

    def to_record(self) -> dict:
        return {"id": self.id, "question": self.question, "options": dict(self.options),
                "answer": self.gold, "language": self.language, "system": self.system}

    @classmethod
    def from_record(cls, rec: Mapping) -> "McqItem":
        try:
            return cls(id=str(rec["id"]), question=rec["question"], options=dict(rec["options"]),
                       gold=rec["answer"], language=rec.get("language", "hi"),
                       system=rec.get("system"))
        except KeyError as exc:
            raise InvalidItem(f"benchmark record missing field {exc}") from None


def read_benchmark(path) -> list[McqItem]:
    with open(path, encoding="utf-8") as fh:
        return [McqItem.from_record(json.loads(line)) for line in fh if line.strip()]


def write_benchmark(path, items: Iterable[McqItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in items:
            fh.write(json.dumps(it.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------- extraction


class Stage(enum.Enum):
    STRICT = "StrictPattern"
    LETTER = "LetterScan"
    SIMILARITY = "Similarity"
    FAILED = "Failed"


@dataclass(frozen=True)
class ExtractionResult:
    label: str | None
    stage: Stage

    def __post_init__(self):
        if (self.label is None) != (self.stage is Stage.FAILED):
            raise ValueError("label must be None exactly when extraction failed")


_STRICT = re.compile(r"(?:answer|उत्तर)\s*[:：]\s*\(?\s*([a-j])\b\s*\)?", re.IGNORECASE)
_FINAL_PAREN = re.compile(r"\(\s*([a-j])\s*\)\W*$", re.IGNORECASE)
_LETTER = re.compile(r"(?<![\w])\(?([A-J])\s*[).:](?!\w)|\(([A-J])(?![\w])")
_TOKENS = re.compile(r"(?:[^\W_]|[\u0900-\u097F])+")


def _tokens(text: str) -> list[str]:
    return [t.lower() for t in _TOKENS.findall(text)]


def dice(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 0.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


def extract_answer(response: str, item: McqItem) -> ExtractionResult:
    labels = set(item.options)
    text = response or ""

    strict = [(m.start(), m.group(1).upper()) for m in _STRICT.finditer(text)]
    m = _FINAL_PAREN.search(text)
    if m:
        strict.append((m.start(), m.group(1).upper()))
    strict = [(pos, lab) for pos, lab in strict if lab in labels]
    if strict:
        return ExtractionResult(max(strict)[1], Stage.STRICT)

    letters = [lab for m in _LETTER.finditer(text) for lab in [m.group(1) or m.group(2)]
               if lab in labels]
    if letters:
        return ExtractionResult(letters[-1], Stage.LETTER)

    tail = _tokens(text)[-TAIL_TOKENS:]
    if tail:
        scores = {lab: dice(tail, _tokens(opt)) for lab, opt in item.options.items()}
        best = max(scores.values())
        winners = [lab for lab, s in scores.items() if s == best]
        if best > SIMILARITY_THRESHOLD and len(winners) == 1:
            return ExtractionResult(winners[0], Stage.SIMILARITY)
    return ExtractionResult(None, Stage.FAILED)


# ---------------------------------------------------------------- scoring

Generator = Callable[[McqItem, int], str]


@dataclass
class ItemResult:
    id: str
    run: int
    label: str | None
    stage: str
    correct: bool
    error: str | None = None


@dataclass
class EvalReport:
    name: str
    language: str
    runs: int
    n_items: int
    run_accuracy: list[float]
    items: list[ItemResult] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.run_accuracy))

    @property
    def item_ids(self) -> list[str]:
        seen = dict.fromkeys(r.id for r in self.items)
        return list(seen)

    def stage_histogram(self) -> dict[str, int]:
        counts = Counter(r.stage for r in self.items)
        return {s.value: counts.get(s.value, 0) for s in Stage}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "language": self.language,
            "runs": self.runs,
            "n_items": self.n_items,
            "accuracy": self.accuracy,
            "run_accuracy": self.run_accuracy,
            "stage_histogram": self.stage_histogram(),
            "errors": sum(r.error is not None for r in self.items),
            "items": [vars(r) for r in self.items],
        }


def run_seed(base_seed: int, run: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, run, index]).generate_state(1)[0])


def score_benchmark(model: Generator, items: Sequence[McqItem], runs: int = DEFAULT_RUNS,
                    seed: int = 0, name: str = "benchmark") -> EvalReport:
    """Accuracy averaged over ``runs`` independent generations per item.

    Failed extractions and generation errors count as incorrect.
    """
    if not items:
        raise EmptyBenchmark(f"{name}: no items")
    if runs < 1:
        raise ValueError("runs must be at least 1")
    languages = {it.language for it in items}
    report = EvalReport(name, languages.pop() if len(languages) == 1 else "mixed",
                        runs, len(items), [])
    for run in range(runs):
        correct = 0
        for j, item in enumerate(items):
            try:
                response = model(item, run_seed(seed, run, j))
            except Exception as exc:  # recorded per item, the run continues
                report.items.append(ItemResult(item.id, run, None, Stage.FAILED.value, False,
                                               f"{type(exc).__name__}: {exc}"))
                continue
            res = extract_answer(response, item)
            ok = res.label == item.gold
            correct += ok
            report.items.append(ItemResult(item.id, run, res.label, res.stage.value, ok))
        report.run_accuracy.append(correct / len(items))
    return report


def accuracy_gap(report_en: EvalReport | float, report_hi: EvalReport | float) -> float:
    """English minus Hindi accuracy over language-paired items."""
    if isinstance(report_en, EvalReport) and isinstance(report_hi, EvalReport):
        if sorted(report_en.item_ids) != sorted(report_hi.item_ids):
            raise PairingError("English and Hindi reports cover different item ids")
        return report_en.accuracy - report_hi.accuracy
    acc_en = report_en.accuracy if isinstance(report_en, EvalReport) else float(report_en)
    acc_hi = report_hi.accuracy if isinstance(report_hi, EvalReport) else float(report_hi)
    return acc_en - acc_hi


def gold_echo_model(item: McqItem, seed: int) -> str:
    return f"Answer: {item.gold}"


def fixed_letter_model(letter: str = "A") -> Generator:
    def model(item: McqItem, seed: int) -> str:
        return f"Answer: {letter}"
    return model


CSV_FIELDS = ["name", "language", "runs", "n_items", "accuracy", "delta"]


def reports_csv(reports: Sequence[EvalReport], delta: float | None = None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({"name": r.name, "language": r.language, "runs": r.runs,
                    "n_items": r.n_items, "accuracy": repr(r.accuracy),
                    "delta": "" if delta is None else repr(delta)})
    return buf.getvalue()
