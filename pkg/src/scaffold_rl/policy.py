"""A small autoregressive policy over a closed bilingual vocabulary.

Context at each step is the previous token plus a bag-of-prompt summary::

    h      = emb[prev] + mean(prompt_map[prompt tokens])
    logits = h @ out + bias

All parameters live in one flat float64 vector so that snapshots,
checkpoints and finite-difference checks operate on a single array.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp

from .errors import InvalidToken, NumericalError, ScaffoldError
from .textlang import Role, ScriptClass, Token, TokenSequence, classify_token, split_surfaces

BOS = "<bos>"
EOS = "<eos>"
THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_MARK = "Answer:"

CHECKPOINT_VERSION = 1
MAX_VOCAB = 128
MAX_DIM = 16


class Vocabulary:
    """Ordered, closed vocabulary. Ids are positions in ``entries``."""

    def __init__(self, entries: Iterable[tuple[str, Role]]):
        self.entries: list[tuple[str, ScriptClass, Role]] = []
        self._ids: dict[str, int] = {}
        for surface, role in entries:
            if surface in self._ids:
                raise ValueError(f"duplicate vocabulary surface {surface!r}")
            self._ids[surface] = len(self.entries)
            self.entries.append((surface, classify_token(surface), role))
        if len(self.entries) > MAX_VOCAB:
            raise ValueError(f"vocabulary of {len(self.entries)} exceeds {MAX_VOCAB}")
        for required in (BOS, EOS):
            if required not in self._ids:
                raise ValueError(f"vocabulary must contain {required}")
        self._tokens = [
            Token(s, i, script, role) for i, (s, script, role) in enumerate(self.entries)
        ]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def id(self, surface: str) -> int:
        try:
            return self._ids[surface]
        except KeyError:
            raise InvalidToken(f"unknown token {surface!r}") from None

    def surface(self, idx: int) -> str:
        self.check_ids([idx])
        return self.entries[idx][0]

    def token(self, idx: int, role: Role | None = None) -> Token:
        tok = self._tokens[idx]
        return tok if role is None or role is tok.role else Token(tok.surface, idx, tok.script, role)

    @property
    def bos(self) -> int:
        return self._ids[BOS]

    @property
    def eos(self) -> int:
        return self._ids[EOS]

    def check_ids(self, ids: Iterable[int]) -> None:
        n = len(self.entries)
        for i in ids:
            if not 0 <= int(i) < n:
                raise InvalidToken(f"token id {i} outside vocabulary of size {n}")

    def encode(self, text: str) -> list[int]:
        return [self.id(s) for s in split_surfaces(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.surface(int(i)) for i in ids)

    def to_json(self) -> list[list[str]]:
        return [[s, role.value] for s, _, role in self.entries]

    @classmethod
    def from_json(cls, data) -> "Vocabulary":
        return cls((s, Role(r)) for s, r in data)

    def generated_sequence(self, ids: Sequence[int]) -> TokenSequence:
        """Tokens of a generated response with positional roles.

        Delimiters (think markers, answer marker, eos) get ``DELIMITER``;
        tokens strictly inside a think block get ``REASONING``; everything
        else is ``ANSWER``.
        """
        self.check_ids(ids)
        open_id = self._ids.get(THINK_OPEN)
        close_id = self._ids.get(THINK_CLOSE)
        delims = {self.eos, self.bos, open_id, close_id, self._ids.get(ANSWER_MARK)}
        inside = False
        out = []
        for i in ids:
            i = int(i)
            if i == open_id:
                inside = True
                role = Role.DELIMITER
            elif i == close_id:
                inside = False
                role = Role.DELIMITER
            elif i in delims:
                role = Role.DELIMITER
            else:
                role = Role.REASONING if inside else Role.ANSWER
            out.append(self.token(i, role))
        return TokenSequence(out)


def toy_vocabulary(size: int) -> Vocabulary:
    """Vocabulary of ``size`` entries for gradient and property tests.

    Alternates Devanagari and Latin content tokens after the two specials.
    """
    if size < 3:
        raise ValueError("toy vocabulary needs at least 3 entries")
    entries: list[tuple[str, Role]] = [(BOS, Role.DELIMITER), (EOS, Role.DELIMITER)]
    for k in range(size - 2):
        surface = f"क{k}" if k % 2 == 0 else f"w{k}"
        entries.append((surface, Role.ANSWER))
    return Vocabulary(entries)


@dataclass
class PolicyParams:
    """Flat parameter vector with named views.

    Layout: ``emb`` (V, d) | ``out`` (d, V) | ``bias`` (V,) | ``prompt_map`` (V, d).
    """

    flat: np.ndarray
    vocab_size: int
    dim: int

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.size_for(self.vocab_size, self.dim),):
            raise ValueError("flat parameter vector has the wrong length")
        if self.dim > MAX_DIM:
            raise ValueError(f"dim {self.dim} exceeds {MAX_DIM}")

    @staticmethod
    def size_for(vocab_size: int, dim: int) -> int:
        return 3 * vocab_size * dim + vocab_size

    def _slices(self):
        V, d = self.vocab_size, self.dim
        a = V * d
        b = a + d * V
        c = b + V
        return slice(0, a), slice(a, b), slice(b, c), slice(c, c + V * d)

    @property
    def emb(self) -> np.ndarray:
        return self.flat[self._slices()[0]].reshape(self.vocab_size, self.dim)

    @property
    def out(self) -> np.ndarray:
        return self.flat[self._slices()[1]].reshape(self.dim, self.vocab_size)

    @property
    def bias(self) -> np.ndarray:
        return self.flat[self._slices()[2]]

    @property
    def prompt_map(self) -> np.ndarray:
        return self.flat[self._slices()[3]].reshape(self.vocab_size, self.dim)

    @property
    def frozen(self) -> bool:
        return not self.flat.flags.writeable

    @classmethod
    def init(cls, vocab_size: int, dim: int, seed: int, scale: float = 0.1) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        n = cls.size_for(vocab_size, dim)
        return cls(rng.uniform(-scale, scale, size=n), vocab_size, dim)

    @classmethod
    def zeros(cls, vocab_size: int, dim: int) -> "PolicyParams":
        return cls(np.zeros(cls.size_for(vocab_size, dim)), vocab_size, dim)

    @classmethod
    def wrap(cls, flat: np.ndarray, vocab_size: int, dim: int) -> "PolicyParams":
        """View an existing array without copying or validating it."""
        obj = cls.__new__(cls)
        obj.flat, obj.vocab_size, obj.dim = flat, vocab_size, dim
        return obj

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.flat.copy(), self.vocab_size, self.dim)

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        return PolicyParams(np.array(flat, dtype=np.float64), self.vocab_size, self.dim)


def snapshot(params: PolicyParams) -> PolicyParams:
    """Immutable copy, used as the old or reference policy."""
    flat = params.flat.copy()
    flat.setflags(write=False)
    return PolicyParams.wrap(flat, params.vocab_size, params.dim)


# ---------------------------------------------------------------- forward / backward


def prompt_bag(prompts: Sequence[Sequence[int]], vocab_size: int) -> np.ndarray:
    """Row-normalised bag-of-tokens matrix, one row per prompt."""
    bag = np.zeros((len(prompts), vocab_size))
    for row, prompt in enumerate(prompts):
        if len(prompt) == 0:
            continue
        ids = np.asarray(prompt, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= vocab_size:
            raise InvalidToken(f"prompt token outside vocabulary of size {vocab_size}")
        np.add.at(bag[row], ids, 1.0 / len(ids))
    return bag


@dataclass
class Contexts:
    """A flat batch of token contexts.

    ``prev[t]`` is the previous token at position t and ``owner[t]`` the
    row of ``bag`` holding that position's prompt.
    """

    prev: np.ndarray
    owner: np.ndarray
    bag: np.ndarray
    hidden: np.ndarray | None = field(default=None, repr=False)


def forward(params: PolicyParams, ctx: Contexts) -> np.ndarray:
    if ctx.prev.size and (ctx.prev.min() < 0 or ctx.prev.max() >= params.vocab_size):
        raise InvalidToken("context token outside vocabulary")
    pvec = ctx.bag @ params.prompt_map
    ctx.hidden = params.emb[ctx.prev] + pvec[ctx.owner]
    return ctx.hidden @ params.out + params.bias


def backward(params: PolicyParams, ctx: Contexts, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dlogits * logits)`` with respect to the flat parameters."""
    V, d = params.vocab_size, params.dim
    grad = np.zeros_like(params.flat)
    g = PolicyParams.wrap(grad, V, d)
    dh = dlogits @ params.out.T
    g.out[...] = ctx.hidden.T @ dlogits
    g.bias[...] = dlogits.sum(axis=0)
    np.add.at(g.emb, ctx.prev, dh)
    dp = np.zeros((ctx.bag.shape[0], d))
    np.add.at(dp, ctx.owner, dh)
    g.prompt_map[...] = ctx.bag.T @ dp
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient component")
    return grad


def sequence_contexts(
    sequences: Sequence[Sequence[int]], prompts: Sequence[Sequence[int]], vocab_size: int, bos: int
) -> tuple[Contexts, np.ndarray]:
    """Teacher-forced contexts and targets for a batch of sequences."""
    prev, owner, target = [], [], []
    for row, seq in enumerate(sequences):
        seq = [int(t) for t in seq]
        prev.extend([bos] + seq[:-1])
        owner.extend([row] * len(seq))
        target.extend(seq)
    target_arr = np.asarray(target, dtype=np.int64)
    if target_arr.size and (target_arr.min() < 0 or target_arr.max() >= vocab_size):
        raise InvalidToken("sequence token outside vocabulary")
    ctx = Contexts(np.asarray(prev, dtype=np.int64), np.asarray(owner, dtype=np.int64),
                   prompt_bag(prompts, vocab_size))
    return ctx, target_arr


def logits(params: PolicyParams, prompt: Sequence[int], prev: int) -> np.ndarray:
    """Logit vector for a single context."""
    if not 0 <= prev < params.vocab_size:
        raise InvalidToken(f"unknown token id {prev}")
    ctx = Contexts(np.array([prev]), np.array([0]), prompt_bag([prompt], params.vocab_size))
    out = forward(params, ctx)[0]
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite logits")
    return out


def log_prob(params: PolicyParams, seq: Sequence[int] | TokenSequence, prompt: Sequence[int],
             bos: int = 0) -> np.ndarray:
    """Per-token log-probabilities of ``seq`` given ``prompt`` (teacher forcing)."""
    ids = seq.ids if isinstance(seq, TokenSequence) else list(seq)
    if not ids:
        return np.zeros(0)
    ctx, target = sequence_contexts([ids], [prompt], params.vocab_size, bos)
    lp = log_softmax(forward(params, ctx), axis=1)
    return lp[np.arange(len(target)), target]


def score_gradient(params: PolicyParams, seq: Sequence[int] | TokenSequence,
                   prompt: Sequence[int], bos: int = 0) -> np.ndarray:
    """Analytic gradient of the summed token log-probabilities."""
    ids = seq.ids if isinstance(seq, TokenSequence) else list(seq)
    if not ids:
        return np.zeros_like(params.flat)
    ctx, target = sequence_contexts([ids], [prompt], params.vocab_size, bos)
    p = np.exp(log_softmax(forward(params, ctx), axis=1))
    dl = -p
    dl[np.arange(len(target)), target] += 1.0
    return backward(params, ctx, dl)


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SampleRecord:
    ids: tuple[int, ...]
    logp_old: np.ndarray
    seed: int
    prompt_index: int = 0
    truncated: bool = False

    def tokens(self, vocab: Vocabulary) -> TokenSequence:
        return vocab.generated_sequence(self.ids)


def sample_batch(
    params: PolicyParams,
    prompts: Sequence[Sequence[int]],
    k: int,
    seed: int,
    bos: int,
    eos: int,
    max_len: int = 32,
    greedy: bool = False,
) -> list[SampleRecord]:
    """Ancestral sampling of ``k`` responses for each prompt, vectorised.

    Records are ordered prompt-major. Generation stops at ``eos``; a
    response reaching ``max_len`` has ``eos`` forced as its last token and
    is marked truncated. Forced tokens still record their policy log-prob.
    """
    rng = np.random.default_rng(seed)
    n = len(prompts) * k
    owner = np.repeat(np.arange(len(prompts)), k)
    bag = prompt_bag(prompts, params.vocab_size)
    pvec = (bag @ params.prompt_map)[owner]
    prev = np.full(n, bos, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    ids = np.zeros((n, max_len), dtype=np.int64)
    lps = np.zeros((n, max_len))
    lengths = np.zeros(n, dtype=np.int64)
    forced = np.zeros(n, dtype=bool)
    emb, out, bias = params.emb, params.out, params.bias
    for t in range(max_len):
        u = rng.random(n)
        if not alive.any():
            break
        rows = np.flatnonzero(alive)
        lg = (emb[prev[rows]] + pvec[rows]) @ out + bias
        lp = log_softmax(lg, axis=1)
        if greedy:
            choice = lp.argmax(axis=1)
        else:
            cdf = np.cumsum(np.exp(lp), axis=1)
            choice = (cdf < (u[rows] * cdf[:, -1])[:, None]).sum(axis=1)
            choice = np.minimum(choice, params.vocab_size - 1)
        if t == max_len - 1:
            forced[rows] = choice != eos
            choice = np.full(len(rows), eos)
        ids[rows, t] = choice
        lps[rows, t] = lp[np.arange(len(rows)), choice]
        lengths[rows] += 1
        prev[rows] = choice
        alive[rows[choice == eos]] = False
    records = []
    for r in range(n):
        L = int(lengths[r])
        records.append(SampleRecord(
            ids=tuple(int(x) for x in ids[r, :L]),
            logp_old=lps[r, :L].copy(),
            seed=seed,
            prompt_index=int(owner[r]),
            truncated=bool(forced[r]),
        ))
    return records


def sample_group(params: PolicyParams, prompt: Sequence[int], k: int, seed: int,
                 bos: int, eos: int, max_len: int = 32) -> list[SampleRecord]:
    if k < 2:
        raise ValueError("a candidate group needs at least 2 responses")
    return sample_batch(params, [prompt], k, seed, bos, eos, max_len)


# ---------------------------------------------------------------- checkpoints


class CheckpointError(ScaffoldError, IOError):
    pass


def save_checkpoint(path: str | os.PathLike, params: PolicyParams, vocab: Vocabulary,
                    meta: dict | None = None) -> None:
    """Write ``params`` and ``vocab`` atomically (temp file, then rename)."""
    path = os.fspath(path)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "vocab_size": params.vocab_size,
        "dim": params.dim,
        "vocab": vocab.to_json(),
        "meta": meta or {},
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, params=np.asarray(params.flat),
                     header=np.frombuffer(json.dumps(header, ensure_ascii=False).encode(), dtype=np.uint8))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[PolicyParams, Vocabulary, dict]:
    try:
        with np.load(os.fspath(path)) as data:
            flat = data["params"].copy()
            header = json.loads(data["header"].tobytes().decode())
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    params = PolicyParams(flat, header["vocab_size"], header["dim"])
    return params, Vocabulary.from_json(header["vocab"]), header.get("meta", {})


def distribution(params: PolicyParams, prompt: Sequence[int], prev: int) -> np.ndarray:
    """Full next-token distribution at one context."""
    lg = logits(params, prompt, prev)
    return np.exp(lg - logsumexp(lg))
