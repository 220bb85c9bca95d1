"""Three-stage training: language-adaptation SFT, reasoning cold-start SFT, RL.

The RL stage samples K responses per prompt from the previous step's
policy, scores them with the accuracy and language-form rewards, builds
per-kind group advantages, and takes one step on the mixed clipped
objective whose language weight follows a decaying schedule.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import log_softmax

from . import objective as obj
from . import policy as pol
from .advantage import DEFAULT_EPS_NORM, DEFAULT_GROUP_SIZE, batch_advantages
from .errors import DegenerateExample, EmptyBatch, InvalidSchedule, TrainingDiverged
from .evaluation import McqItem, extract_answer
from .lexicon import term_mask
from .rewards import (
    ExactVerifier,
    Verifier,
    accuracy_reward,
    binary_accuracy,
    binary_language,
    language_reward,
    reasoning_hindi_fraction,
)

# ---------------------------------------------------------------- schedule


class Shape(enum.Enum):
    COSINE = "cosine"
    LINEAR = "linear"
    CONSTANT = "constant"


@dataclass(frozen=True)
class DecaySchedule:
    """Language-reward weight over training steps.

    Defaults read the 0.1:0.9 -> 0.9:0.1 (acc:lan) start/end ratios as
    lambda going from 0.9 to 0.1. ``CONSTANT`` holds ``lambda_start``.
    """

    lambda_start: float = 0.9
    lambda_end: float = 0.1
    horizon: int = 2000
    shape: Shape = Shape.COSINE

    def __post_init__(self):
        if isinstance(self.shape, str):
            object.__setattr__(self, "shape", Shape(self.shape))
        if self.horizon < 1:
            raise InvalidSchedule("horizon must be at least 1")
        if self.shape is Shape.CONSTANT:
            if not 0.0 <= self.lambda_start <= 1.0:
                raise InvalidSchedule("constant lambda outside [0, 1]")
        elif not 0.0 <= self.lambda_end <= self.lambda_start <= 1.0:
            raise InvalidSchedule("need 0 <= lambda_end <= lambda_start <= 1")

    @classmethod
    def constant(cls, value: float, horizon: int = 2000) -> "DecaySchedule":
        return cls(value, value, horizon, Shape.CONSTANT)


def lambda_at(sched: DecaySchedule, tau: int) -> float:
    if tau < 0:
        raise InvalidSchedule(f"negative step {tau}")
    if sched.shape is Shape.CONSTANT:
        return sched.lambda_start
    if tau >= sched.horizon:
        return sched.lambda_end
    frac = tau / sched.horizon
    span = sched.lambda_start - sched.lambda_end
    if sched.shape is Shape.LINEAR:
        return sched.lambda_start - span * frac
    return sched.lambda_end + span * (1.0 + math.cos(math.pi * frac)) / 2.0


# ---------------------------------------------------------------- optimisers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return flat - self.lr * grad

    def state(self):
        return None

    def restore(self, state) -> None:
        pass


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = self.v = None
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        b1, b2 = self.betas
        if self.m is None:
            self.m, self.v = np.zeros_like(flat), np.zeros_like(flat)
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return flat - self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * flat)

    def state(self):
        return (None if self.m is None else self.m.copy(),
                None if self.v is None else self.v.copy(), self.t)

    def restore(self, state) -> None:
        self.m, self.v, self.t = state


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------- SFT


@dataclass(frozen=True)
class SftExample:
    prompt: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(x) for x in self.prompt))
        object.__setattr__(self, "target", tuple(int(x) for x in self.target))
        if not self.target:
            raise DegenerateExample("example has no target tokens")

    @property
    def mask(self) -> tuple[int, ...]:
        return (0,) * len(self.prompt) + (1,) * len(self.target)


def _truncate(ex: SftExample, max_len: int | None) -> tuple[int, ...]:
    if max_len is None:
        return ex.target
    room = max_len - len(ex.prompt)
    if room <= 0:
        raise DegenerateExample("truncation leaves no target tokens")
    return ex.target[:room]


def sft_loss_and_grad(params: pol.PolicyParams, batch: Sequence[SftExample], bos: int,
                      max_len: int | None = None) -> tuple[float, np.ndarray]:
    """Token-averaged NLL over unmasked (target) tokens, teacher-forced."""
    if not batch:
        raise EmptyBatch("empty SFT batch")
    targets = [_truncate(ex, max_len) for ex in batch]
    ctx, tgt = pol.sequence_contexts(targets, [ex.prompt for ex in batch], params.vocab_size, bos)
    lp = log_softmax(pol.forward(params, ctx), axis=1)
    rows = np.arange(len(tgt))
    n = len(tgt)
    loss = -float(lp[rows, tgt].sum()) / n
    dl = np.exp(lp) / n
    dl[rows, tgt] -= 1.0 / n
    return loss, pol.backward(params, ctx, dl)


def sft_loss(params: pol.PolicyParams, batch: Sequence[SftExample], bos: int,
             max_len: int | None = None) -> float:
    return sft_loss_and_grad(params, batch, bos, max_len)[0]


class SftStage(enum.Enum):
    LA = "la"
    RC = "rc"


@dataclass(frozen=True)
class SftConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 0.05
    optimizer: str = "adam"
    max_len: int = 32
    ema_decay: float = 0.9
    seed: int = 0


@dataclass
class SftResult:
    params: pol.PolicyParams
    losses: list[float]
    ema: list[float]
    best_step: int


def sft_stage(params: pol.PolicyParams, dataset: Sequence[SftExample], cfg: SftConfig,
              stage: SftStage | str, bos: int) -> SftResult:
    """Minibatch descent on the SFT loss; returns the lowest-EMA-loss parameters."""
    stage = SftStage(stage)
    if not dataset:
        raise EmptyBatch(f"{stage.value} dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    cur = params.copy()
    best, best_ema, best_step = cur.copy(), math.inf, 0
    losses, emas, ema = [], [], None
    for step in range(cfg.steps):
        idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        loss, grad = sft_loss_and_grad(cur, [dataset[i] for i in idx], bos, cfg.max_len)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"{stage.value} SFT loss became {loss} at step {step}")
        ema = loss if ema is None else cfg.ema_decay * ema + (1 - cfg.ema_decay) * loss
        losses.append(loss)
        emas.append(ema)
        if ema < best_ema:
            best, best_ema, best_step = cur.copy(), ema, step
        cur = cur.with_flat(opt.step(cur.flat, grad))
    return SftResult(best, losses, emas, best_step)


# ---------------------------------------------------------------- RL stage


class AccMode(enum.Enum):
    GRADED = "graded"
    BINARY = "binary"


class LanMode(enum.Enum):
    FRACTION = "fraction"
    BINARY = "binary"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 5e-6
    k: int = DEFAULT_GROUP_SIZE
    eps_clip: float = obj.DEFAULT_EPS_CLIP
    beta: float = obj.DEFAULT_BETA
    eps_norm: float = DEFAULT_EPS_NORM
    seed: int = 0
    max_steps: int = 2000
    max_len: int = 32
    optimizer: str = "sgd"
    updates_per_batch: int = 1
    acc_mode: AccMode = AccMode.GRADED
    lan_mode: LanMode = LanMode.FRACTION
    eval_every: int = 20
    # a response cut at the length cap gets no language reward
    truncated_lan_zero: bool = True

    def __post_init__(self):
        object.__setattr__(self, "acc_mode", AccMode(self.acc_mode))
        object.__setattr__(self, "lan_mode", LanMode(self.lan_mode))
        if self.k < 2:
            raise ValueError("K must be at least 2")

    @property
    def clip(self) -> obj.ClipConfig:
        return obj.ClipConfig(self.eps_clip, self.beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["acc_mode"], d["lan_mode"] = self.acc_mode.value, self.lan_mode.value
        return d


@dataclass
class RunLogRecord:
    step: int
    lam: float
    mean_r_acc: float
    mean_r_lan: float
    loss: float
    kl: float
    eval_acc: float | None = None
    eval_hi_frac: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DsrPrompt:
    ids: tuple[int, ...]
    gold: str
    question: str = ""

    @classmethod
    def from_item(cls, item: McqItem, vocab: pol.Vocabulary) -> "DsrPrompt":
        return cls(tuple(vocab.encode(item.question)), item.gold, item.question)


def step_seed(seed: int, tau: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([seed, stream, tau]).generate_state(1)[0])


@dataclass
class StepOutcome:
    params: pol.PolicyParams
    record: RunLogRecord
    rewards_acc: np.ndarray
    rewards_lan: np.ndarray
    samples: list[pol.SampleRecord]


def score_samples(samples: Sequence[pol.SampleRecord], prompts: Sequence[DsrPrompt],
                  vocab: pol.Vocabulary, verifier: Verifier, cfg: TrainConfig):
    acc, lan, masks = [], [], []
    for s in samples:
        p = prompts[s.prompt_index]
        seq = s.tokens(vocab)
        a = accuracy_reward(seq, p.gold, verifier, p.question)
        l = 0.0 if (s.truncated and cfg.truncated_lan_zero) else language_reward(seq)
        acc.append(binary_accuracy(a) if cfg.acc_mode is AccMode.BINARY else a)
        lan.append(binary_language(l) if cfg.lan_mode is LanMode.BINARY else l)
        masks.append(term_mask(seq))
    return np.array(acc), np.array(lan), masks


def dsr_step(
    params: pol.PolicyParams,
    old: pol.PolicyParams,
    ref: pol.PolicyParams,
    prompts: Sequence[DsrPrompt],
    cfg: TrainConfig,
    sched: DecaySchedule,
    tau: int,
    vocab: pol.Vocabulary,
    verifier: Verifier | None = None,
    optimizer=None,
) -> StepOutcome:
    """One RL step. Parameters (and optimiser state) are untouched on error."""
    verifier = verifier or ExactVerifier()
    optimizer = optimizer or make_optimizer(cfg.optimizer, cfg.lr)
    lam = lambda_at(sched, tau)
    saved = optimizer.state()
    try:
        samples = pol.sample_batch(old, [p.ids for p in prompts], cfg.k, step_seed(cfg.seed, tau),
                                   vocab.bos, vocab.eos, cfg.max_len)
        r_acc, r_lan, masks = score_samples(samples, prompts, vocab, verifier, cfg)
        shape = (len(prompts), cfg.k)
        adv_acc = batch_advantages(r_acc.reshape(shape), cfg.eps_norm).ravel()
        adv_lan = batch_advantages(r_lan.reshape(shape), cfg.eps_norm).ravel()
        batch = obj.build_batch(ref, [p.ids for p in prompts], [s.ids for s in samples],
                                [s.prompt_index for s in samples], [s.logp_old for s in samples],
                                adv_acc, adv_lan, masks, vocab.bos)
        flat = params.flat.copy()
        first = None
        for _ in range(cfg.updates_per_batch):
            parts, grad = obj.dsr_loss_and_grad(params.with_flat(flat), batch, cfg.clip, lam)
            if not math.isfinite(parts.loss):
                raise TrainingDiverged(f"non-finite RL loss at step {tau}")
            first = first or parts
            flat = optimizer.step(flat, grad)
        if not np.all(np.isfinite(flat)):
            raise TrainingDiverged(f"non-finite parameters after step {tau}")
    except BaseException:
        optimizer.restore(saved)
        raise
    rec = RunLogRecord(tau, lam, float(r_acc.mean()), float(r_lan.mean()), first.loss, first.kl)
    return StepOutcome(params.with_flat(flat), rec, r_acc, r_lan, samples)


def evaluate_policy(params: pol.PolicyParams, vocab: pol.Vocabulary, items: Sequence[McqItem],
                    seed: int, max_len: int = 32, greedy: bool = False) -> tuple[float, float]:
    """(accuracy, reasoning Hindi fraction) from one response per item."""
    prompts = [vocab.encode(it.question) for it in items]
    samples = pol.sample_batch(params, prompts, 1, seed, vocab.bos, vocab.eos, max_len,
                               greedy=greedy)
    correct, hi = 0, 0.0
    for s, it in zip(samples, items):
        seq = s.tokens(vocab)
        correct += extract_answer(seq.text(), it).label == it.gold
        hi += reasoning_hindi_fraction(seq)
    return correct / len(items), hi / len(items)


class DsrTrainer:
    """Runs the RL stage from a cold-start checkpoint.

    The reference policy is frozen at construction; the sampling policy is
    refreshed every step.
    """

    def __init__(self, params: pol.PolicyParams, vocab: pol.Vocabulary,
                 train: Sequence[McqItem], eval_items: Sequence[McqItem], cfg: TrainConfig,
                 sched: DecaySchedule, verifier: Verifier | None = None,
                 ref: pol.PolicyParams | None = None):
        if not train:
            raise EmptyBatch("no training prompts")
        self.params = params.copy()
        self.ref = pol.snapshot(ref if ref is not None else params)
        self.vocab = vocab
        self.prompts = [DsrPrompt.from_item(it, vocab) for it in train]
        self.eval_items = list(eval_items)
        self.cfg, self.sched = cfg, sched
        self.verifier = verifier or ExactVerifier(tuple(train[0].options))
        self.optimizer = make_optimizer(cfg.optimizer, cfg.lr)
        self.rng = np.random.default_rng(step_seed(cfg.seed, 0, stream=1))
        self.eval_seed = step_seed(cfg.seed, 0, stream=2)
        self.log: list[RunLogRecord] = []

    def evaluate(self) -> tuple[float, float]:
        return evaluate_policy(self.params, self.vocab, self.eval_items, self.eval_seed,
                               self.cfg.max_len)

    def step(self, tau: int) -> RunLogRecord:
        idx = self.rng.choice(len(self.prompts), size=min(self.cfg.batch_size, len(self.prompts)),
                              replace=False)
        batch = [self.prompts[i] for i in idx]
        out = dsr_step(self.params, pol.snapshot(self.params), self.ref, batch, self.cfg,
                       self.sched, tau, self.vocab, self.verifier, self.optimizer)
        rec = out.record
        if self.eval_items and (tau % self.cfg.eval_every == 0):
            rec.eval_acc, rec.eval_hi_frac = self.evaluate()
        self.params = out.params
        self.log.append(rec)
        return rec

    def run(self, steps: int | None = None, log_path: str | None = None,
            callback: Callable[[RunLogRecord], None] | None = None) -> list[RunLogRecord]:
        steps = self.cfg.max_steps if steps is None else steps
        fh = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            for tau in range(len(self.log), len(self.log) + steps):
                rec = self.step(tau)
                if fh:
                    fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
                if callback:
                    callback(rec)
        finally:
            if fh:
                fh.close()
        return self.log


# ---------------------------------------------------------------- logs and ablations

CSV_COLUMNS = ["step", "lambda", "mean_r_acc", "mean_r_lan", "loss", "kl", "eval_acc", "eval_hi_frac"]


def write_run_csv(path: str, log: Iterable[RunLogRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in log:
            w.writerow([r.step, repr(r.lam), repr(r.mean_r_acc), repr(r.mean_r_lan), repr(r.loss),
                        repr(r.kl), "" if r.eval_acc is None else repr(r.eval_acc),
                        "" if r.eval_hi_frac is None else repr(r.eval_hi_frac)])


def read_run_log(path: str) -> list[RunLogRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RunLogRecord(**json.loads(line)) for line in fh if line.strip()]


def window_means(log: Sequence[RunLogRecord], fraction: float = 0.1) -> dict[str, dict[str, float]]:
    """Means over the first and last ``fraction`` of steps (eval metrics where present)."""
    n = len(log)
    w = max(1, int(round(fraction * n)))
    out = {}
    for name, part in (("first", log[:w]), ("last", log[n - w:])):
        ev = [r for r in part if r.eval_acc is not None]
        out[name] = {
            "mean_r_acc": float(np.mean([r.mean_r_acc for r in part])),
            "mean_r_lan": float(np.mean([r.mean_r_lan for r in part])),
            "eval_acc": float(np.mean([r.eval_acc for r in ev])) if ev else float("nan"),
            "eval_hi_frac": float(np.mean([r.eval_hi_frac for r in ev])) if ev else float("nan"),
        }
    return out


def reward_ablation_variants(cfg: TrainConfig, sched: DecaySchedule,
                             constant_lambda: float = 0.5) -> dict[str, tuple[TrainConfig, DecaySchedule]]:
    """Trainer configurations for the reward ablations."""
    return {
        "full": (cfg, sched),
        "no_lan": (cfg, DecaySchedule.constant(0.0, sched.horizon)),
        "binary_acc": (replace(cfg, acc_mode=AccMode.BINARY), sched),
        "binary_lan": (replace(cfg, lan_mode=LanMode.BINARY), sched),
        "constant": (cfg, DecaySchedule.constant(constant_lambda, sched.horizon)),
        "linear": (cfg, replace(sched, shape=Shape.LINEAR)),
    }


# ---------------------------------------------------------------- desk preset
# TrainConfig keeps the large-model defaults (lr 5e-6 suits AdamW on billions
# of weights). The tiny policy needs plain SGD with a far larger step; these
# are the settings the synthetic-world experiments and the CLI use.

DESK_DIM = 16
DESK_LA = SftConfig(steps=300, lr=0.03, optimizer="adam", seed=0)
DESK_RC = SftConfig(steps=120, lr=0.03, optimizer="adam", seed=1)
DESK_RC_HINDI_RATIO = 0.4
DESK_DSR = TrainConfig(lr=0.25, optimizer="sgd", max_steps=2000)
