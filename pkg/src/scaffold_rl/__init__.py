"""Dual-reward group-relative policy optimization with a decaying language-form reward.

The package is organised bottom-up:

* :mod:`scaffold_rl.textlang`   script classification and the Hindi-token fraction
* :mod:`scaffold_rl.rewards`    accuracy / language-form rewards and verifiers
* :mod:`scaffold_rl.advantage`  group-relative advantages
* :mod:`scaffold_rl.policy`     a tiny differentiable bilingual policy
* :mod:`scaffold_rl.objective`  clipped surrogates, KL term, mixed loss + gradient
* :mod:`scaffold_rl.training`   SFT stages, the decay schedule and the RL loop
* :mod:`scaffold_rl.evaluation` MCQ answer extraction and benchmark scoring
* :mod:`scaffold_rl.lexicon`    lexicon-guided terminology injection
* :mod:`scaffold_rl.synthdata`  the seeded synthetic bilingual MCQ world
* :mod:`scaffold_rl.cli`        command-line entry points
"""

__version__ = "0.1.0"
