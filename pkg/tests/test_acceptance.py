"""Acceptance gate: one PASS/FAIL line per criterion.

Lines are printed as each check finishes (visible with ``-s``) and are
repeated in the pytest terminal summary.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import log_softmax

from scaffold_rl import cli
from scaffold_rl import objective as obj
from scaffold_rl import policy as pol
from scaffold_rl import training as tr
from scaffold_rl.advantage import batch_advantages, group_advantages
from scaffold_rl.errors import SentinelLost
from scaffold_rl.evaluation import (
    LABELS, McqItem, accuracy_gap, fixed_letter_model, gold_echo_model, score_benchmark,
)
from scaffold_rl.lexicon import (
    InjectMode, Lexicon, LexiconEntry, inject_terms, load_lexicon, longest_match_spans,
    protect_translate_restore, translate_mcq,
)
from scaffold_rl.policy import ANSWER_MARK, BOS, EOS, THINK_CLOSE, THINK_OPEN, Vocabulary
from scaffold_rl.rewards import ACC_LEVELS, ExactVerifier, accuracy_reward, language_reward
from scaffold_rl.textlang import Role

from conftest import ACCEPTANCE, random_dsr_instance


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print("\n" + line)
    assert ok, line


# ---------------------------------------------------------------- 1


def _near_kink(params, batch, eps, tol=1e-4):
    logp = log_softmax(pol.forward(params, batch.contexts()), axis=1)
    r = np.exp(logp[np.arange(len(batch.target)), batch.target] - batch.logp_old)
    return bool(np.any(np.abs(r - (1 + eps)) < tol) or np.any(np.abs(r - (1 - eps)) < tol))


def test_criterion_1_gradient_fidelity():
    rng = np.random.default_rng(2024)
    h, checked, skipped, worst = 1e-6, 0, 0, 0.0
    t0 = time.perf_counter()
    while checked < 120:
        params, batch = random_dsr_instance(rng, vocab_size=int(rng.integers(4, 65)),
                                            k=int(rng.choice([2, 4, 8])), max_len=8)
        cfg = obj.ClipConfig(0.2, float(rng.choice([0.0, 0.001, 0.05])))
        lam = float(rng.uniform())
        if _near_kink(params, batch, cfg.eps_clip):
            skipped += 1
            continue
        _, g = obj.dsr_loss_and_grad(params, batch, cfg, lam)
        x0 = params.flat
        loss = lambda x: obj.dsr_loss_value(params.with_flat(x), batch, cfg, lam)
        coords = rng.choice(x0.size, size=min(12, x0.size), replace=False)
        dirs = [np.eye(1, x0.size, int(i)).ravel() for i in coords]
        dirs += [u / np.linalg.norm(u) for u in rng.normal(size=(3, x0.size))]
        for u in dirs:
            num = (loss(x0 + h * u) - loss(x0 - h * u)) / (2 * h)
            ana = float(g @ u)
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-4))
        checked += 1
    secs = time.perf_counter() - t0
    report(1, worst < 1e-5 and secs < 60,
           f"{checked} instances ({skipped} near a clip kink skipped), "
           f"max rel err {worst:.2e} (< 1e-5), {secs:.1f}s (< 60s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_advantage_invariants():
    # The fixed tolerances assume a non-degenerate group. For spread sigma the
    # exact deviations are ~ulp(c)/sigma (shift: the input r + c is rounded)
    # and |A| eps |1 - 1/s| / sigma (scale), so groups with sigma < 0.01 are
    # held to those bounds instead.
    rng = np.random.default_rng(7)
    n, eps = 10_000, 1e-12
    k = rng.choice([2, 4, 8, 16], size=n)
    shift_err = scale_err = 0.0
    near, near_bad = 0, 0
    for i in range(n):
        r = rng.uniform(0, 1, size=k[i])
        c, s = rng.uniform(-10, 10), rng.uniform(0.1, 10)
        base = group_advantages(r)
        d_shift = np.max(np.abs(group_advantages(r + c) - base))
        a = group_advantages(r, eps_norm=eps)
        d_scale = np.max(np.abs(group_advantages(s * r, eps_norm=eps) - a))
        sigma = r.std()
        if sigma >= 0.01:
            shift_err, scale_err = max(shift_err, d_shift), max(scale_err, d_scale)
        else:
            near += 1
            shift_bound = 8 * np.finfo(float).eps * (abs(c) + 1) / sigma
            scale_bound = 1.01 * np.max(np.abs(a)) * eps * abs(1 - 1 / s) / sigma + 1e-13
            near_bad += d_shift > shift_bound or d_scale > scale_bound
    equal = rng.uniform(0, 1, size=(1000, 1)) * np.ones((1, 8))
    zeros = bool(np.all(batch_advantages(equal) == 0.0))
    ok = shift_err <= 1e-12 and scale_err <= 1e-9 and zeros and near_bad == 0
    report(2, ok, f"{n} groups (K in 2..16, U(0,1) rewards): shift err {shift_err:.1e} (<= 1e-12), "
                  f"scale err {scale_err:.1e} (<= 1e-9, eps_norm 1e-12); {near} near-degenerate "
                  f"groups within analytic bounds: {near_bad == 0}; equal-reward groups exactly zero: {zeros}")


# ---------------------------------------------------------------- 3


def test_criterion_3_objective_reductions():
    rng = np.random.default_rng(3)
    grad_err = mask_err = 0.0
    cfg = obj.ClipConfig(0.2, 0.001)
    for _ in range(200):
        params, batch = random_dsr_instance(rng)
        _, g = obj.dsr_loss_and_grad(params, batch, cfg, 0.0)
        # the ablation never computes language rewards: zero advantages, no mask
        ablated = replace(batch, adv_lan=np.zeros_like(batch.adv_lan),
                          mask=np.ones_like(batch.mask))
        _, g0 = obj.dsr_loss_and_grad(params, ablated, cfg, 0.0)
        grad_err = max(grad_err, np.max(np.abs(g - g0)))

        group = [obj.TokenLogProbs(rng.normal(-1, 0.3, n), rng.normal(-1, 0.3, n))
                 for n in rng.integers(1, 9, size=rng.integers(2, 9))]
        adv = [np.full(len(x), rng.normal()) for x in group]
        ones = [np.ones(len(x)) for x in group]
        mask_err = max(mask_err, abs(obj.objective_lan(group, adv, ones, cfg)
                                     - obj.objective_acc(group, adv, cfg)))
    report(3, grad_err <= 1e-12 and mask_err <= 1e-12,
           f"lambda=0 vs w/o-R^lan gradient max diff {grad_err:.1e}; "
           f"all-ones-mask J_lan vs J_acc max diff {mask_err:.1e} (both <= 1e-12)")


# ---------------------------------------------------------------- 4


def test_criterion_4_schedule():
    s = tr.DecaySchedule(horizon=2000)
    e0 = abs(tr.lambda_at(s, 0) - 0.9)
    e1 = abs(tr.lambda_at(s, s.horizon) - 0.1)
    taus = np.sort(np.random.default_rng(4).integers(0, s.horizon + 1, size=10_000))
    lams = np.array([tr.lambda_at(s, int(t)) for t in taus])
    mono = bool(np.all(np.diff(lams) <= 0))
    report(4, e0 <= 1e-12 and e1 <= 1e-12 and mono,
           f"|lambda(0)-0.9| = {e0:.1e}, |lambda(T)-0.1| = {e1:.1e} (<= 1e-12), "
           f"non-increasing over 10^4 sampled steps: {mono}")


# ---------------------------------------------------------------- 5


def test_criterion_5_reward_sets():
    hi, en = ["ज्वर", "दर्द", "रक्त", "हृदय"], ["fever", "pain", "blood", "heart"]
    entries = [(BOS, Role.DELIMITER), (EOS, Role.DELIMITER), (THINK_OPEN, Role.DELIMITER),
               (THINK_CLOSE, Role.DELIMITER), (ANSWER_MARK, Role.DELIMITER)]
    entries += [(c, Role.ANSWER) for c in "ABCDE"] + [(w, Role.REASONING) for w in hi + en]
    vocab = Vocabulary(entries)
    rng = np.random.default_rng(5)
    verifier = ExactVerifier()
    image, mismatches = set(), 0
    for _ in range(10_000):
        if rng.random() < 0.5:  # well-formed reasoning then an answer
            body = list(rng.choice(hi + en, size=int(rng.integers(1, 7))))
            words = [THINK_OPEN] + body + [THINK_CLOSE, ANSWER_MARK, str(rng.choice(list("ABCDE"))), EOS]
        else:
            pool = hi + en + [THINK_OPEN, THINK_CLOSE, ANSWER_MARK, "A", "B", EOS]
            words = list(rng.choice(pool, size=int(rng.integers(1, 12))))
        seq = vocab.generated_sequence(vocab.encode(" ".join(words)))
        image.add(accuracy_reward(seq, str(rng.choice(list("ABCDE"))), verifier))
        brute = sum(w in hi for w in words) / len(words)
        mismatches += language_reward(seq) != brute
    ok = image == set(ACC_LEVELS) and mismatches == 0
    report(5, ok, f"accuracy reward image {sorted(image)} over 10^4 responses; "
                  f"language reward vs brute-force count mismatches: {mismatches}")


# ---------------------------------------------------------------- 7


def test_criterion_7_evaluation_harness():
    n = 3000
    rng = np.random.default_rng(7)
    items = [McqItem(f"i{j}", "q", {LABELS[i]: f"option {i}" for i in range(5)},
                     LABELS[j % 5]) for j in rng.permutation(n)]
    echo = score_benchmark(gold_echo_model, items).accuracy
    fixed = score_benchmark(fixed_letter_model("A"), items).accuracy
    sigma = math.sqrt(0.2 * 0.8 / n)
    gap1 = accuracy_gap(0.607, 0.507)
    gap2 = accuracy_gap(0.271, 0.286)
    ok = (echo == 1.0 and abs(fixed - 0.2) <= 3 * sigma
          and abs(gap1 - 0.100) <= 1e-12 and abs(gap2 + 0.015) <= 1e-12)
    report(7, ok, f"gold-echo {echo}, fixed letter {fixed:.4f} (0.2 +- {3 * sigma:.4f}), "
                  f"gap(0.607, 0.507) = {gap1:.3f}, gap(0.271, 0.286) = {gap2:.3f}")


# ---------------------------------------------------------------- 8

LEX_WORDS = ["heart", "attack", "fever", "high", "blood", "pressure", "today", "and", "the"]
LEX_TERMS = {"heart": "हृदय", "heart attack": "हृदयाघात", "fever": "ज्वर",
             "blood pressure": "रक्तचाप", "high blood pressure": "उच्च रक्तचाप"}


def _brute_spans(words):
    out, i = [], 0
    while i < len(words):
        for n in range(min(3, len(words) - i), 0, -1):
            if " ".join(words[i:i + n]) in LEX_TERMS:
                out.append((i, i + n))
                i += n
                break
        else:
            i += 1
    return out


def test_criterion_8_lexicon_pipeline():
    lex = Lexicon(LexiconEntry(k, v) for k, v in LEX_TERMS.items())
    rng = np.random.default_rng(8)
    longest_bad = overlap_bad = structure_bad = 0
    for j in range(10_000):
        words = list(rng.choice(LEX_WORDS, size=int(rng.integers(0, 12))))
        text = " ".join(words)
        spans = longest_match_spans(text, lex)
        longest_bad += [(s.start, s.end) for s in spans] != _brute_spans(words)
        overlap_bad += any(a.char_end > b.char_start for a, b in zip(spans, spans[1:]))
        n_opts = int(rng.integers(2, 11))
        opts = {LABELS[i]: " ".join(rng.choice(LEX_WORDS, size=int(rng.integers(1, 5))))
                for i in range(n_opts)}
        item = McqItem(f"x{j}", text or "q", opts, LABELS[int(rng.integers(n_opts))])
        out = translate_mcq(item, lex, str.upper)
        structure_bad += (out.labels != item.labels or out.gold != item.gold or out.id != item.id)

    basic = load_lexicon("heart\tहृदय\nheart attack\tहृदयाघात\nfever\tज्वर\n")
    ha = [s.entry.source_term for s in longest_match_spans("heart attack", basic)]
    para = inject_terms("high fever today", longest_match_spans("high fever today", basic),
                        InjectMode.PARENTHETICAL)
    try:
        protect_translate_restore("fever today", basic, lambda t: "नहीं")
        sentinel_fired = False
    except SentinelLost:
        sentinel_fired = True
    ok = (longest_bad == overlap_bad == structure_bad == 0 and ha == ["heart attack"]
          and para == "high ज्वर (fever) today" and sentinel_fired)
    report(8, ok, f"10^4 items: longest-match violations {longest_bad}, overlaps {overlap_bad}, "
                  f"label/order violations {structure_bad}; 'heart attack' -> {ha}; "
                  f"parenthetical {para!r}; sentinel loss detected: {sentinel_fired}")


# ---------------------------------------------------------------- 6 and 9: desk runs


def _pipeline(root, seed=0):
    """gen-world -> la -> rc -> dsr -> eval through the command line."""
    w, la, rc, dsr = (root / x for x in ("world", "la", "rc", "dsr"))
    steps = [
        ["gen-world", "--out", w],
        ["train", "--stage", "la", "--world", w, "--out", la],
        ["train", "--stage", "rc", "--world", w, "--out", rc, "--init-checkpoint", la / "checkpoint.npz"],
        ["train", "--stage", "dsr", "--world", w, "--out", dsr, "--ref-checkpoint", rc / "checkpoint.npz"],
        ["eval", "--checkpoint", dsr / "checkpoint.npz", "--benchmark-hi", w / "eval_hi.jsonl",
         "--benchmark-en", w / "eval_en.jsonl", "--out", root / "eval"],
    ]
    for argv in steps:
        code = cli.main([str(a) for a in argv + ["--seed", seed]])
        assert code == 0, argv


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    _pipeline(root / "a")
    t_full = time.perf_counter() - t0
    t0 = time.perf_counter()
    a = root / "a"
    code = cli.main([str(x) for x in [
        "train", "--stage", "dsr", "--world", a / "world", "--out", root / "no_lan",
        "--ref-checkpoint", a / "rc" / "checkpoint.npz", "--lambda-shape", "constant",
        "--lambda", 0.0]])
    assert code == 0
    t_ablation = time.perf_counter() - t0
    return root, t_full + t_ablation


def test_criterion_6_scaffolding_dynamics(desk):
    root, secs = desk
    n_train = json.loads((root / "a" / "world" / "manifest.json").read_text())["n_train"]
    full = tr.window_means(tr.read_run_log(str(root / "a" / "dsr" / "run_log.jsonl")))
    abl = tr.window_means(tr.read_run_log(str(root / "no_lan" / "run_log.jsonl")))
    steps = len(tr.read_run_log(str(root / "a" / "dsr" / "run_log.jsonl")))
    f0, f1, a1 = full["first"], full["last"], abl["last"]
    checks = {
        "a": f1["eval_acc"] >= 0.9,
        "b": f1["eval_hi_frac"] >= 0.8,
        "c": f1["eval_acc"] > f0["eval_acc"] and f1["eval_hi_frac"] > f0["eval_hi_frac"],
        "ablation acc": a1["eval_acc"] >= 0.9,
        "ablation hi gap": f1["eval_hi_frac"] - a1["eval_hi_frac"] >= 0.2,
        "size": n_train >= 500 and steps == 2000,
        "time": secs < 15 * 60,
    }
    failed = [k for k, v in checks.items() if not v]
    report(6, not failed,
           f"{n_train} train items, {steps} steps; full: eval acc {f0['eval_acc']:.3f} -> "
           f"{f1['eval_acc']:.3f}, eval hi {f0['eval_hi_frac']:.3f} -> {f1['eval_hi_frac']:.3f}; "
           f"w/o R^lan: eval acc {a1['eval_acc']:.3f}, eval hi {a1['eval_hi_frac']:.3f}; "
           f"{secs:.0f}s (< 900s)" + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_criterion_9_reproducibility(desk, tmp_path):
    root, _ = desk
    _pipeline(tmp_path)
    a, b = root / "a", tmp_path
    same = {}
    for stage in ("la", "rc", "dsr"):
        same[f"{stage} log"] = ((a / stage / "run_log.jsonl").read_bytes()
                                == (b / stage / "run_log.jsonl").read_bytes())
    fin = lambda d: json.loads((d / "dsr" / "manifest.json").read_text())["final"]
    same["final metrics"] = fin(a) == fin(b)
    rep = lambda d: json.loads((d / "eval" / "report.json").read_text())["reports"]
    same["eval reports"] = rep(a) == rep(b)
    same["checkpoint"] = np.array_equal(pol.load_checkpoint(a / "dsr" / "checkpoint.npz")[0].flat,
                                        pol.load_checkpoint(b / "dsr" / "checkpoint.npz")[0].flat)
    report(9, all(same.values()),
           "two executions of gen-world -> la -> rc -> dsr -> eval: "
           + ", ".join(f"{k} {'identical' if v else 'DIFFER'}" for k, v in same.items()))
