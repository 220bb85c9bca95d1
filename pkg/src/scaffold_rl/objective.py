"""Clipped dual-reward objective with KL regularisation.

The list-based functions (:func:`objective_acc`, :func:`objective_lan`,
:func:`kl_term`) evaluate the objective candidate by candidate. The
training path uses :func:`dsr_loss_and_grad`, which evaluates the same
quantities on a flat token batch and returns the analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from . import policy as pol
from .errors import AlignmentError, EmptyBatch, InvalidSchedule, NumericalError

DEFAULT_EPS_CLIP = 0.2
DEFAULT_BETA = 0.001


@dataclass(frozen=True)
class ClipConfig:
    eps_clip: float = DEFAULT_EPS_CLIP
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not 0.0 < self.eps_clip < 1.0:
            raise ValueError(f"eps_clip must lie in (0, 1), got {self.eps_clip}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class TokenLogProbs:
    """Log-probabilities of one candidate's generated tokens."""

    current: np.ndarray
    old: np.ndarray
    ref: np.ndarray | None = None

    def __post_init__(self):
        for name in ("current", "old", "ref"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=np.float64))
        n = len(self.current)
        if len(self.old) != n or (self.ref is not None and len(self.ref) != n):
            raise AlignmentError("current/old/ref log-probabilities differ in length")

    def __len__(self) -> int:
        return len(self.current)


def likelihood_ratio(lp: TokenLogProbs) -> np.ndarray:
    diff = lp.current - lp.old
    if not np.all(np.isfinite(diff)):
        raise NumericalError("non-finite log-probability in ratio")
    return np.exp(diff)


def clip_surrogate(r, adv, eps_clip: float):
    """``min(r*A, clip(r, 1-eps, 1+eps)*A)``; works on scalars and arrays."""
    r = np.asarray(r, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    out = np.minimum(r * adv, np.clip(r, 1.0 - eps_clip, 1.0 + eps_clip) * adv)
    return float(out) if out.ndim == 0 else out


def clip_surrogate_slope(r: np.ndarray, adv: np.ndarray, eps_clip: float) -> np.ndarray:
    """d/dr of :func:`clip_surrogate` on the attained branch.

    Ties go to the unclipped branch, whose slope is ``A``; the clipped
    branch is flat in r.
    """
    unclipped = r * adv <= np.clip(r, 1.0 - eps_clip, 1.0 + eps_clip) * adv
    return np.where(unclipped, adv, 0.0)


def _check_group(group: Sequence[TokenLogProbs], adv: Sequence[np.ndarray]) -> None:
    if len(group) == 0:
        raise EmptyBatch("objective over an empty batch")
    if len(adv) != len(group):
        raise AlignmentError("one advantage row per candidate required")
    for lp, a in zip(group, adv):
        if len(lp) == 0:
            raise EmptyBatch("candidate with no generated tokens")
        if len(a) != len(lp):
            raise AlignmentError("advantage row length differs from candidate length")


def objective_acc(group: Sequence[TokenLogProbs], adv: Sequence[np.ndarray],
                  cfg: ClipConfig = ClipConfig()) -> float:
    _check_group(group, adv)
    total = 0.0
    for lp, a in zip(group, adv):
        total += clip_surrogate(likelihood_ratio(lp), a, cfg.eps_clip).sum() / len(lp)
    return total / len(group)


def objective_lan(group: Sequence[TokenLogProbs], adv: Sequence[np.ndarray],
                  mask: Sequence[np.ndarray], cfg: ClipConfig = ClipConfig()) -> float:
    """Masked language objective; still divides each candidate by its full length."""
    _check_group(group, adv)
    if len(mask) != len(group):
        raise AlignmentError("one mask row per candidate required")
    total = 0.0
    for lp, a, m in zip(group, adv, mask):
        m = np.asarray(m, dtype=np.float64)
        if len(m) != len(lp):
            raise AlignmentError("term mask length differs from candidate length")
        total += (m * clip_surrogate(likelihood_ratio(lp), a, cfg.eps_clip)).sum() / len(lp)
    return total / len(group)


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise AlignmentError("policy and reference distributions differ in shape")
    for name, d in (("policy", p), ("reference", q)):
        if np.any(d < 0) or np.any(np.abs(d.sum(axis=-1) - 1.0) > 1e-8):
            raise NumericalError(f"{name} distribution is not normalised")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    if not np.all(np.isfinite(terms)):
        raise NumericalError("KL is infinite: reference assigns zero mass to a policy outcome")
    return terms.sum(axis=-1)


def kl_term(policy_dists: Sequence[np.ndarray], ref_dists: Sequence[np.ndarray]) -> float:
    """Token-averaged exact KL(policy || reference), averaged over candidates.

    Each element is an (L_i, V) array of next-token distributions at the
    contexts visited by candidate i.
    """
    if len(policy_dists) == 0:
        raise EmptyBatch("KL over an empty batch")
    if len(policy_dists) != len(ref_dists):
        raise AlignmentError("one reference distribution set per candidate required")
    total = 0.0
    for p, q in zip(policy_dists, ref_dists):
        rows = _kl_rows(np.atleast_2d(p), np.atleast_2d(q))
        total += rows.mean()
    return float(total / len(policy_dists))


def mixed_objective(j_acc: float, j_lan: float, kl: float, lam: float, beta: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise InvalidSchedule(f"mixing weight {lam} outside [0, 1]")
    return (1.0 - lam) * j_acc + lam * j_lan - beta * kl


def dsr_loss(j_acc: float, j_lan: float, kl: float, lam: float, beta: float) -> float:
    return -mixed_objective(j_acc, j_lan, kl, lam, beta)


# ---------------------------------------------------------------- flat batch path


@dataclass
class DsrBatch:
    """All generated tokens of one step, flattened.

    ``cand[t]`` is the candidate owning token t; candidate i has prompt row
    ``prompt_of[i]`` in ``bag``. ``ref_logp`` holds full reference
    log-distributions (T, V) at every visited context.
    """

    prev: np.ndarray
    target: np.ndarray
    cand: np.ndarray
    prompt_of: np.ndarray
    bag: np.ndarray
    logp_old: np.ndarray
    ref_logp: np.ndarray
    mask: np.ndarray
    adv_acc: np.ndarray
    adv_lan: np.ndarray
    lengths: np.ndarray

    @property
    def n_candidates(self) -> int:
        return len(self.lengths)

    def contexts(self) -> pol.Contexts:
        return pol.Contexts(self.prev, self.prompt_of[self.cand], self.bag)


def build_batch(
    ref: pol.PolicyParams,
    prompts: Sequence[Sequence[int]],
    sequences: Sequence[Sequence[int]],
    prompt_of: Sequence[int],
    logp_old: Sequence[np.ndarray],
    adv_acc: Sequence[float],
    adv_lan: Sequence[float],
    masks: Sequence[np.ndarray] | None,
    bos: int,
) -> DsrBatch:
    if len(sequences) == 0:
        raise EmptyBatch("no candidates in batch")
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if np.any(lengths == 0):
        raise EmptyBatch("candidate with no generated tokens")
    prev, target, cand = [], [], []
    for i, seq in enumerate(sequences):
        seq = [int(t) for t in seq]
        prev.extend([bos] + seq[:-1])
        target.extend(seq)
        cand.extend([i] * len(seq))
    old = np.concatenate([np.asarray(x, dtype=np.float64) for x in logp_old])
    if masks is None:
        mask = np.ones(len(target))
    else:
        if any(len(m) != n for m, n in zip(masks, lengths)) or len(masks) != len(sequences):
            raise AlignmentError("term mask does not align with candidate tokens")
        mask = np.concatenate([np.asarray(m, dtype=np.float64) for m in masks])
    if len(old) != len(target):
        raise AlignmentError("old log-probabilities do not align with candidate tokens")
    batch = DsrBatch(
        prev=np.asarray(prev, dtype=np.int64),
        target=np.asarray(target, dtype=np.int64),
        cand=np.asarray(cand, dtype=np.int64),
        prompt_of=np.asarray(prompt_of, dtype=np.int64),
        bag=pol.prompt_bag(prompts, ref.vocab_size),
        logp_old=old,
        ref_logp=np.empty(0),
        mask=mask,
        adv_acc=np.asarray(adv_acc, dtype=np.float64),
        adv_lan=np.asarray(adv_lan, dtype=np.float64),
        lengths=lengths,
    )
    batch.ref_logp = log_softmax(pol.forward(ref, batch.contexts()), axis=1)
    return batch


@dataclass(frozen=True)
class LossParts:
    loss: float
    j_acc: float
    j_lan: float
    kl: float


def dsr_loss_and_grad(params: pol.PolicyParams, batch: DsrBatch, cfg: ClipConfig,
                      lam: float) -> tuple[LossParts, np.ndarray]:
    """Loss ``-J`` and its analytic gradient with respect to ``params.flat``."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidSchedule(f"mixing weight {lam} outside [0, 1]")
    if batch.n_candidates == 0:
        raise EmptyBatch("no candidates in batch")
    ctx = batch.contexts()
    logp_full = log_softmax(pol.forward(params, ctx), axis=1)
    rows = np.arange(len(batch.target))
    logp = logp_full[rows, batch.target]
    diff = logp - batch.logp_old
    if not np.all(np.isfinite(diff)):
        raise NumericalError("non-finite log-probability in ratio")
    r = np.exp(diff)
    a_acc = batch.adv_acc[batch.cand]
    a_lan = batch.adv_lan[batch.cand]
    w = 1.0 / (batch.n_candidates * batch.lengths[batch.cand])

    eps = cfg.eps_clip
    j_acc = float(np.sum(w * clip_surrogate(r, a_acc, eps)))
    j_lan = float(np.sum(w * batch.mask * clip_surrogate(r, a_lan, eps)))
    p = np.exp(logp_full)
    kl_tok = np.sum(p * (logp_full - batch.ref_logp), axis=1)
    kl = float(np.sum(w * kl_tok))
    loss = -mixed_objective(j_acc, j_lan, kl, lam, cfg.beta)

    # dJ/dlogp_t for the sampled token, then chain through softmax
    coef = w * r * ((1.0 - lam) * clip_surrogate_slope(r, a_acc, eps)
                    + lam * batch.mask * clip_surrogate_slope(r, a_lan, eps))
    dj = -p * coef[:, None]
    dj[rows, batch.target] += coef
    if cfg.beta:
        dj -= cfg.beta * (w[:, None] * p * (logp_full - batch.ref_logp - kl_tok[:, None]))
    grad = -pol.backward(params, ctx, dj)
    return LossParts(loss, j_acc, j_lan, kl), grad


def dsr_loss_value(params: pol.PolicyParams, batch: DsrBatch, cfg: ClipConfig, lam: float) -> float:
    """Loss only, through the candidate-by-candidate functions."""
    ctx = batch.contexts()
    logp_full = log_softmax(pol.forward(params, ctx), axis=1)
    rows = np.arange(len(batch.target))
    logp = logp_full[rows, batch.target]
    group, adv_a, adv_l, masks, pd, qd = [], [], [], [], [], []
    for i, n in enumerate(batch.lengths):
        sel = batch.cand == i
        group.append(TokenLogProbs(logp[sel], batch.logp_old[sel]))
        adv_a.append(np.full(n, batch.adv_acc[i]))
        adv_l.append(np.full(n, batch.adv_lan[i]))
        masks.append(batch.mask[sel])
        pd.append(np.exp(logp_full[sel]))
        qd.append(np.exp(batch.ref_logp[sel]))
    j_acc = objective_acc(group, adv_a, cfg)
    j_lan = objective_lan(group, adv_l, masks, cfg)
    kl = kl_term(pd, qd)
    return dsr_loss(j_acc, j_lan, kl, lam, cfg.beta)
