"""Group-relative advantages: center, normalise, broadcast to tokens."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySequence, GroupTooSmall

DEFAULT_GROUP_SIZE = 8
DEFAULT_EPS_NORM = 1e-6


class RewardKind(enum.Enum):
    ACC = "acc"
    LAN = "lan"


@dataclass(frozen=True)
class GroupRewards:
    values: tuple[float, ...]
    kind: RewardKind = RewardKind.ACC

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) < 2:
            raise GroupTooSmall(f"group of {len(self.values)} rewards; need at least 2")


def center_rewards(group: GroupRewards | Sequence[float]) -> np.ndarray:
    values = group.values if isinstance(group, GroupRewards) else group
    r = np.asarray(values, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(f"group of {r.size} rewards; need at least 2")
    return r - r.mean()


def normalize_rewards(centered: Sequence[float], eps_norm: float = DEFAULT_EPS_NORM) -> np.ndarray:
    """Divide by the population standard deviation plus ``eps_norm``."""
    c = np.asarray(centered, dtype=np.float64)
    return c / (c.std() + eps_norm)


def group_advantages(rewards: Sequence[float], eps_norm: float = DEFAULT_EPS_NORM) -> np.ndarray:
    return normalize_rewards(center_rewards(rewards), eps_norm)


def batch_advantages(rewards: np.ndarray, eps_norm: float = DEFAULT_EPS_NORM) -> np.ndarray:
    """Advantages for a (prompts, K) reward matrix, statistics per row."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] < 2:
        raise GroupTooSmall("reward matrix must have at least 2 candidates per prompt")
    c = r - r.mean(axis=1, keepdims=True)
    return c / (c.std(axis=1, keepdims=True) + eps_norm)


def broadcast_advantage(normalized: Sequence[float], lengths: Sequence[int]) -> list[np.ndarray]:
    """Per-token advantage rows; row i is constant with ``lengths[i]`` entries."""
    if len(normalized) != len(lengths):
        raise ValueError("one length per candidate required")
    rows = []
    for a, n in zip(normalized, lengths):
        if n < 1:
            raise EmptySequence("cannot broadcast an advantage over zero tokens")
        rows.append(np.full(int(n), float(a)))
    return rows
