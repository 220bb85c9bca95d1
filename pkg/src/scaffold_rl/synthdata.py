"""Seeded synthetic bilingual MCQ world.

A prompt names a *key*: a (cue, filler) pair. The correct option letter
depends on the cue only, so a policy can generalise to unseen keys while
the train and eval key sets stay disjoint. Every item carries a rationale
in both registers (Devanagari and Latin) built from the same concepts,
which keeps answer accuracy and reasoning language independent.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import WorldTooSmall
from .evaluation import LABELS, McqItem
from .policy import ANSWER_MARK, BOS, EOS, THINK_CLOSE, THINK_OPEN, Vocabulary
from .textlang import Role

# (hindi, english, is_medical_term)
CONCEPTS: tuple[tuple[str, str, bool], ...] = (
    ("ज्वर", "fever", False),
    ("दर्द", "pain", False),
    ("रक्त", "blood", False),
    ("हृदय", "heart", False),
    ("श्वास", "breath", False),
    ("त्वचा", "skin", False),
    ("पेट", "stomach", False),
    ("सिर", "head", False),
    ("खांसी", "cough", False),
    ("सूजन", "swelling", False),
    ("थकान", "fatigue", False),
    ("हड्डी", "bone", False),
    ("नाड़ी", "pulse", True),
    ("मूत्र", "urine", True),
    ("यकृत", "liver", True),
    ("गुर्दा", "kidney", True),
)
TAGS = {"hi": "प्रश्न", "en": "Question"}
DESK_N_ITEMS = 700


@dataclass(frozen=True)
class WorldSpec:
    n_cues: int = 10
    n_fillers: int = 10
    n_options: int = 5
    concepts_per_cue: int = 6
    eval_fraction: float = 0.2
    term_rate: float = 0.2
    seed: int = 0

    @property
    def n_keys(self) -> int:
        return self.n_cues * self.n_fillers


@dataclass(frozen=True)
class WorldItem:
    id: str
    cue: int
    filler: int
    gold: str
    options_hi: dict
    options_en: dict
    cot_hi: str
    cot_en: str

    @property
    def key(self) -> tuple[int, int]:
        return (self.cue, self.filler)

    def question(self, language: str) -> str:
        return f"{TAGS[language]} S{self.cue} P{self.filler}"

    def mcq(self, language: str) -> McqItem:
        opts = self.options_hi if language == "hi" else self.options_en
        return McqItem(id=self.id, question=self.question(language), options=opts,
                       gold=self.gold, language=language, system="synthetic")

    def record(self, language: str) -> dict:
        rec = self.mcq(language).to_record()
        rec["cot"] = self.cot_hi if language == "hi" else self.cot_en
        return rec


@dataclass
class World:
    spec: WorldSpec
    vocab: Vocabulary
    train: list[WorldItem]
    eval: list[WorldItem]
    cue_letter: dict[int, str] = field(default_factory=dict)

    def manifest(self) -> dict:
        return {"spec": asdict(self.spec), "n_train": len(self.train), "n_eval": len(self.eval),
                "train_keys": len({i.key for i in self.train}),
                "eval_keys": len({i.key for i in self.eval}),
                "vocab_size": len(self.vocab)}


def build_vocabulary(spec: WorldSpec) -> Vocabulary:
    entries: list[tuple[str, Role]] = [
        (BOS, Role.DELIMITER), (EOS, Role.DELIMITER), (THINK_OPEN, Role.DELIMITER),
        (THINK_CLOSE, Role.DELIMITER), (ANSWER_MARK, Role.DELIMITER),
        ("(", Role.REASONING), (")", Role.REASONING),
    ]
    entries += [(LABELS[i], Role.ANSWER) for i in range(spec.n_options)]
    entries += [(TAGS["hi"], Role.PROMPT), (TAGS["en"], Role.PROMPT)]
    entries += [(f"S{c}", Role.PROMPT) for c in range(spec.n_cues)]
    entries += [(f"P{f}", Role.PROMPT) for f in range(spec.n_fillers)]
    for hi, en, _ in CONCEPTS:
        entries += [(hi, Role.REASONING), (en, Role.REASONING)]
    return Vocabulary(entries)


def _rationales(concepts: Sequence[int], rng: np.random.Generator, term_rate: float):
    en = [CONCEPTS[c][1] for c in concepts]
    hi = []
    for c in concepts:
        h, e, term = CONCEPTS[c]
        hi.append(h)
        if term and rng.random() < term_rate:
            hi += ["(", e, ")"]
    return " ".join(hi), " ".join(en)


def generate_world(spec: WorldSpec, n_items: int) -> World:
    if n_items < 2:
        raise WorldTooSmall(f"need at least 2 items to split, got {n_items}")
    if spec.n_fillers < 2 or spec.n_cues < 1:
        raise WorldTooSmall("need at least one cue and two fillers for a disjoint split")
    if not 2 <= spec.n_options <= len(LABELS):
        raise ValueError("n_options must be between 2 and 10")
    if spec.n_options > len(CONCEPTS) or spec.concepts_per_cue > len(CONCEPTS):
        raise ValueError("not enough concepts for the requested options")
    rng = np.random.default_rng(spec.seed)

    letters = [LABELS[i % spec.n_options] for i in range(spec.n_cues)]
    rng.shuffle(letters)
    cue_letter = dict(enumerate(letters))
    cue_concepts = {c: rng.choice(len(CONCEPTS), spec.concepts_per_cue, replace=False).tolist()
                    for c in range(spec.n_cues)}
    filler_concept = {f: int(rng.integers(len(CONCEPTS))) for f in range(spec.n_fillers)}

    # per cue, a disjoint handful of fillers goes to eval; every cue keeps train keys
    n_eval_f = min(spec.n_fillers - 1, max(1, round(spec.eval_fraction * spec.n_fillers)))
    train_keys, eval_keys = [], []
    for c in range(spec.n_cues):
        fillers = rng.permutation(spec.n_fillers).tolist()
        eval_keys += [(c, f) for f in sorted(fillers[:n_eval_f])]
        train_keys += [(c, f) for f in sorted(fillers[n_eval_f:])]

    n_eval = min(n_items - 1, max(1, round(spec.eval_fraction * n_items)))
    n_train = n_items - n_eval

    def make(keys, n, prefix):
        items = []
        for j in range(n):
            cue, filler = keys[int(rng.integers(len(keys)))]
            gold = cue_letter[cue]
            gold_concept = cue_concepts[cue][0]
            others = [x for x in rng.permutation(len(CONCEPTS)).tolist() if x != gold_concept]
            slots = others[:spec.n_options - 1]
            slots.insert(LABELS.index(gold), gold_concept)
            labels = LABELS[:spec.n_options]
            concepts = cue_concepts[cue] + [filler_concept[filler]]
            cot_hi, cot_en = _rationales(concepts, rng, spec.term_rate)
            items.append(WorldItem(
                id=f"{prefix}{j:05d}", cue=cue, filler=filler, gold=gold,
                options_hi={lab: CONCEPTS[s][0] for lab, s in zip(labels, slots)},
                options_en={lab: CONCEPTS[s][1] for lab, s in zip(labels, slots)},
                cot_hi=cot_hi, cot_en=cot_en,
            ))
        return items

    train = make(train_keys, n_train, "tr")
    evals = make(eval_keys, n_eval, "ev")
    return World(spec, build_vocabulary(spec), train, evals, cue_letter)


# ---------------------------------------------------------------- SFT targets


def la_target(item: WorldItem) -> str:
    """Short Hindi factual response, no reasoning block."""
    return f"{item.cot_hi} {EOS}"


def rc_target(item: WorldItem, cot: str) -> str:
    return f"{THINK_OPEN} {cot} {THINK_CLOSE} {ANSWER_MARK} {item.gold} {EOS}"


def rc_cot_choice(items: Sequence[WorldItem], hindi_ratio: float, seed: int) -> list[str]:
    """Pick each item's cold-start rationale register (Hindi with prob ``hindi_ratio``)."""
    rng = np.random.default_rng(seed)
    return [it.cot_hi if rng.random() < hindi_ratio else it.cot_en for it in items]


def sft_examples(world: World, stage: str, hindi_ratio: float = 0.4, seed: int = 1):
    """Teacher-forcing examples for the ``la`` or ``rc`` stage (Hindi prompts)."""
    from .training import SftExample

    v = world.vocab
    if stage == "la":
        targets = [la_target(it) for it in world.train]
    elif stage == "rc":
        cots = rc_cot_choice(world.train, hindi_ratio, seed)
        targets = [rc_target(it, c) for it, c in zip(world.train, cots)]
    else:
        raise ValueError(f"no SFT dataset for stage {stage!r}")
    return [SftExample(v.encode(it.question("hi")), v.encode(t))
            for it, t in zip(world.train, targets)]


# ---------------------------------------------------------------- files


def _dump(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_world(world: World, out_dir: str) -> dict[str, str]:
    """Write train / eval datasets and a manifest; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "train": os.path.join(out_dir, "train.jsonl"),
        "eval_hi": os.path.join(out_dir, "eval_hi.jsonl"),
        "eval_en": os.path.join(out_dir, "eval_en.jsonl"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    _dump(paths["train"], (it.record(lang) for it in world.train for lang in ("hi", "en")))
    _dump(paths["eval_hi"], (it.mcq("hi").to_record() for it in world.eval))
    _dump(paths["eval_en"], (it.mcq("en").to_record() for it in world.eval))
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(world.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def read_world(out_dir: str) -> World:
    """Rebuild a world from files written by :func:`write_world`."""
    with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = WorldSpec(**manifest["spec"])
    # regeneration is exact given the WorldSpec; verify against the files
    world = generate_world(spec, manifest["n_train"] + manifest["n_eval"])
    with open(os.path.join(out_dir, "train.jsonl"), encoding="utf-8") as fh:
        ids = [json.loads(line)["id"] for line in fh if line.strip()]
    if sorted(set(ids)) != sorted(it.id for it in world.train):
        raise ValueError(f"{out_dir}: train file does not match its manifest")
    return world
