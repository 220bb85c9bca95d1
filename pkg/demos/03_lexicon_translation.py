"""Protect medical terms behind sentinels, run a (toy) translator, and restore
them as ``target (source)`` parentheticals. The parentheticals are what the
language objective later masks out.

    python demos/03_lexicon_translation.py
"""

from scaffold_rl.errors import SentinelLost
from scaffold_rl.evaluation import McqItem
from scaffold_rl.lexicon import (
    load_lexicon, longest_match_spans, protect_translate_restore, translate_mcq,
)
from scaffold_rl.policy import Vocabulary
from scaffold_rl.lexicon import term_mask
from scaffold_rl.textlang import Role

LEXICON = """\
# english<TAB>hindi
heart\tहृदय
heart attack\tहृदयाघात
fever\tज्वर
blood pressure\tरक्तचाप
"""
lex = load_lexicon(LEXICON)

text = "Sudden heart attack with high blood pressure and fever"
print("input:   ", text)
print("spans:   ", [s.entry.source_term for s in longest_match_spans(text, lex)])


def shouting_translator(s: str) -> str:
    # stands in for a real MT system; it must leave sentinels alone
    return s.upper()


print("restored:", protect_translate_restore(text, lex, shouting_translator))

item = McqItem("demo-1", "Which sign suggests a heart attack?",
               {"A": "fever", "B": "chest pain", "C": "low blood pressure"}, gold="B", language="en")
out = translate_mcq(item, lex)
print("\nMCQ after processing (labels, order and gold untouched):")
print("  Q:", out.question)
for label, opt in out.options.items():
    print(f"  {label}: {opt}")
print("  gold:", out.gold)

try:
    protect_translate_restore(text, lex, lambda s: "अनुवाद")
except SentinelLost as exc:
    print("\na translator that drops sentinels is caught:", exc)

# The term mask zeroes the language objective on "( english term )".
vocab = Vocabulary([("<bos>", Role.DELIMITER), ("<eos>", Role.DELIMITER), ("हृदयाघात", Role.REASONING),
                    ("(", Role.REASONING), ("heart", Role.REASONING),
                    ("attack", Role.REASONING), (")", Role.REASONING), ("रक्त", Role.REASONING)])
seq = vocab.generated_sequence(vocab.encode("हृदयाघात ( heart attack ) रक्त"))
print("\nterm mask:", dict(zip([t.surface for t in seq], term_mask(seq).astype(int).tolist())))
