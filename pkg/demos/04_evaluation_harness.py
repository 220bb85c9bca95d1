"""The answer-extraction cascade and benchmark scoring, on a few examples.

    python demos/04_evaluation_harness.py
"""

import numpy as np

from scaffold_rl.evaluation import (
    LABELS, McqItem, accuracy_gap, extract_answer, fixed_letter_model, gold_echo_model,
    score_benchmark,
)

item = McqItem("q1", "Which organ pumps blood?",
               {"A": "liver", "B": "kidney", "C": "lung", "D": "the heart muscle", "E": "skin"},
               gold="D", language="en")

for response in ["reasoning ... Answer: B",
                 "उत्तर: (C)",
                 "My pick is D) since it pumps",
                 "it must be the heart muscle",
                 "no idea"]:
    res = extract_answer(response, item)
    print(f"{response!r:40s} -> {res.label}  ({res.stage.value})")

rng = np.random.default_rng(0)
bench = [McqItem(f"i{j}", "q", {LABELS[i]: f"option {i}" for i in range(5)}, LABELS[int(rng.integers(5))])
         for j in range(500)]
print("\ngold echo:     ", score_benchmark(gold_echo_model, bench).accuracy)
print("always 'A':    ", round(score_benchmark(fixed_letter_model("A"), bench).accuracy, 4))


def coin(item, seed):
    # a model that is right 60% of the time, wrong letter otherwise
    r = np.random.default_rng(seed)
    return f"Answer: {item.gold if r.random() < 0.6 else 'A' if item.gold != 'A' else 'B'}"


rep = score_benchmark(coin, bench, runs=3, seed=1)
print("noisy model:   ", round(rep.accuracy, 4), "per run", [round(a, 3) for a in rep.run_accuracy])
print("stage counts:  ", rep.stage_histogram())
print("\nEnglish-minus-Hindi gap for (0.607, 0.507):", round(accuracy_gap(0.607, 0.507), 3))
