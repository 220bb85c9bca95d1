"""Score a handful of responses, turn them into group advantages, and see how
the language weight shifts the objective over training.

    python demos/01_rewards_and_advantages.py
"""

import numpy as np

from scaffold_rl import synthdata as sd
from scaffold_rl.advantage import group_advantages
from scaffold_rl.rewards import ExactVerifier, accuracy_reward, language_reward
from scaffold_rl.training import DecaySchedule, lambda_at

world = sd.generate_world(sd.WorldSpec(), 50)
vocab = world.vocab
item = world.train[0]
wrong = next(l for l in "ABCDE" if l != item.gold)

# One prompt, four candidate responses of different quality.
responses = {
    "hindi reasoning, right": sd.rc_target(item, item.cot_hi),
    "english reasoning, right": sd.rc_target(item, item.cot_en),
    "hindi reasoning, wrong": sd.rc_target(item, item.cot_hi).replace(f": {item.gold}", f": {wrong}"),
    "no reasoning block": f"Answer: {item.gold} <eos>",
}

print(f"prompt: {item.question('hi')}   gold: {item.gold}\n")
verifier = ExactVerifier()
r_acc, r_lan = [], []
for name, text in responses.items():
    seq = vocab.generated_sequence(vocab.encode(text))
    r_acc.append(accuracy_reward(seq, item.gold, verifier))
    r_lan.append(language_reward(seq))
    print(f"{name:26s} R_acc {r_acc[-1]:.1f}   R_lan {r_lan[-1]:.3f}")

# Each reward kind is normalised inside the group on its own.
a_acc, a_lan = group_advantages(r_acc), group_advantages(r_lan)
print("\nadvantages (acc, lan):")
for name, a, l in zip(responses, a_acc, a_lan):
    print(f"  {name:26s} {a:+.3f}  {l:+.3f}")

# Early on the language term dominates; by the end accuracy does.
sched = DecaySchedule(horizon=2000)
print("\ncombined per-candidate weight (1 - lambda) A_acc + lambda A_lan:")
for tau in (0, 500, 1000, 1500, 2000):
    lam = lambda_at(sched, tau)
    mix = (1 - lam) * a_acc + lam * a_lan
    print(f"  step {tau:4d}  lambda {lam:.3f}  " + "  ".join(f"{m:+.2f}" for m in mix))
print("\nThe Hindi, correct response is preferred throughout; the English, correct one "
      "moves from penalised to favoured as the scaffold is withdrawn.")
