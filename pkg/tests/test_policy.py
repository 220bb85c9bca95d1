import math

import numpy as np
import pytest
from scipy.special import logsumexp

from scaffold_rl import policy as pol
from scaffold_rl.errors import InvalidToken
from scaffold_rl.textlang import Role


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_zero_params_uniform():
    p = pol.PolicyParams.zeros(64, 4)
    d = pol.distribution(p, [3, 5], 1)
    np.testing.assert_allclose(d, np.full(64, 1 / 64), atol=0)


def test_single_token_uniform_logprob():
    p = pol.PolicyParams.zeros(64, 4)
    lp = pol.log_prob(p, [7], [3])
    assert lp[0] == pytest.approx(math.log(1 / 64), abs=1e-12)
    assert lp[0] == pytest.approx(-4.1589, abs=1e-4)


def test_logits_reproducible_and_shift_invariant():
    a = pol.PolicyParams.init(20, 5, seed=3)
    b = pol.PolicyParams.init(20, 5, seed=3)
    np.testing.assert_array_equal(pol.logits(a, [2, 4], 1), pol.logits(b, [2, 4], 1))
    lg = pol.logits(a, [2], 1)
    np.testing.assert_allclose(np.exp(lg - logsumexp(lg)), np.exp(lg + 7 - logsumexp(lg + 7)),
                               atol=1e-15)


def test_init_range():
    p = pol.PolicyParams.init(30, 8, seed=0)
    assert np.all(np.abs(p.flat) <= 0.1)
    assert p.flat.size == pol.PolicyParams.size_for(30, 8)


def test_normalization_exhaustive():
    p = pol.PolicyParams.init(24, 6, seed=1, scale=1.0)
    for prev in range(24):
        assert abs(pol.distribution(p, [5, 9], prev).sum() - 1.0) < 1e-10


def test_length_one_enumeration_sums_to_one():
    p = pol.PolicyParams.init(16, 4, seed=2, scale=1.0)
    total = sum(math.exp(pol.log_prob(p, [t], [1, 2]).sum()) for t in range(16))
    assert abs(total - 1.0) < 1e-10


def test_prefix_sums_non_increasing():
    p = pol.PolicyParams.init(16, 4, seed=2, scale=1.0)
    cums = np.cumsum(pol.log_prob(p, [3, 1, 4, 1, 5], [2]))
    assert np.all(np.diff(cums) <= 0)


def test_invalid_tokens():
    p = pol.PolicyParams.init(8, 2, seed=0)
    with pytest.raises(InvalidToken):
        pol.logits(p, [1], 8)
    with pytest.raises(InvalidToken):
        pol.log_prob(p, [9], [1])
    with pytest.raises(InvalidToken):
        pol.log_prob(p, [1], [12])


def test_score_gradient_matches_fd(rng):
    p = pol.PolicyParams.init(7, 3, seed=4, scale=0.5)
    seq, prompt = [1, 4, 2, 6], [3, 5]
    g = pol.score_gradient(p, seq, prompt)
    f = lambda x: pol.log_prob(p.with_flat(x), seq, prompt).sum()
    num = fd_grad(f, p.flat.copy())
    rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-4)
    assert rel.max() < 1e-5


def test_score_gradient_uniform_closed_form():
    V, d = 5, 2
    p = pol.PolicyParams.zeros(V, d)
    g = pol.PolicyParams.wrap(pol.score_gradient(p, [3], [1]), V, d)
    expected = -np.full(V, 1 / V)
    expected[3] += 1.0
    np.testing.assert_allclose(g.bias, expected, atol=1e-15)


def test_score_gradient_zero_length_and_linearity():
    p = pol.PolicyParams.init(9, 3, seed=5, scale=0.5)
    assert not pol.score_gradient(p, [], [1]).any()
    # concatenation: the second segment's first context is the first segment's last token
    a, b = [2, 3], [4, 5, 6]
    whole = pol.score_gradient(p, a + b, [1])
    first = pol.score_gradient(p, a, [1])
    ctx, tgt = pol.sequence_contexts([a + b], [[1]], 9, 0)
    lp = pol.forward(p, ctx)
    probs = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    dl = -probs
    dl[np.arange(len(tgt)), tgt] += 1
    dl[:len(a)] = 0
    second = pol.backward(p, ctx, dl)
    np.testing.assert_allclose(whole, first + second, atol=1e-12)


def test_sampling_deterministic():
    p = pol.PolicyParams.init(12, 4, seed=1, scale=1.0)
    a = pol.sample_group(p, [2, 3], 8, seed=99, bos=0, eos=1)
    b = pol.sample_group(p, [2, 3], 8, seed=99, bos=0, eos=1)
    assert len(a) == 8
    for x, y in zip(a, b):
        assert x.ids == y.ids
        np.testing.assert_array_equal(x.logp_old, y.logp_old)


def test_sampled_logp_matches_log_prob():
    p = pol.PolicyParams.init(12, 4, seed=1, scale=1.0)
    for rec in pol.sample_group(p, [2, 3], 6, seed=5, bos=0, eos=1):
        np.testing.assert_allclose(pol.log_prob(p, rec.ids, [2, 3], bos=0), rec.logp_old,
                                   atol=1e-12)


def test_length_cap_forces_eos():
    V = 6
    p = pol.PolicyParams.zeros(V, 2)
    p.bias[1] = -50.0           # eos practically never sampled
    recs = pol.sample_group(p, [2], 4, seed=0, bos=0, eos=1, max_len=5)
    for r in recs:
        assert len(r.ids) == 5 and r.ids[-1] == 1 and r.truncated
        np.testing.assert_allclose(pol.log_prob(p, r.ids, [2]), r.logp_old, atol=1e-12)


def test_group_needs_two():
    p = pol.PolicyParams.zeros(6, 2)
    with pytest.raises(ValueError):
        pol.sample_group(p, [2], 1, seed=0, bos=0, eos=1)


def test_single_step_frequencies_within_3_sigma():
    V = 6
    p = pol.PolicyParams.init(V, 3, seed=8, scale=1.0)
    n = 100_000
    # with a cap of 2 the first draw is a free sample; only the second can be forced
    recs = pol.sample_batch(p, [[2]], n, seed=11, bos=0, eos=1, max_len=2)
    counts = np.bincount([r.ids[0] for r in recs], minlength=V)
    probs = pol.distribution(p, [2], 0)
    sigma = np.sqrt(n * probs * (1 - probs))
    assert np.all(np.abs(counts - n * probs) <= 3 * sigma + 1e-9)


def test_snapshot_immutable():
    p = pol.PolicyParams.init(10, 3, seed=0)
    s = pol.snapshot(p)
    before = pol.log_prob(s, [1, 2], [3]).copy()
    p.flat += 1.0
    np.testing.assert_array_equal(pol.log_prob(s, [1, 2], [3]), before)
    with pytest.raises(ValueError):
        s.flat[0] = 3.0
    ss = pol.snapshot(s)
    np.testing.assert_array_equal(ss.flat, s.flat)


def test_vocabulary_roundtrip():
    v = pol.toy_vocabulary(10)
    assert v.decode(v.encode(v.decode([2, 3]))) == v.decode([2, 3])
    assert pol.Vocabulary.from_json(v.to_json()).entries == v.entries
    with pytest.raises(InvalidToken):
        v.id("nope")
    with pytest.raises(ValueError):
        pol.Vocabulary([(pol.BOS, Role.DELIMITER), (pol.BOS, Role.DELIMITER)])


def test_checkpoint_roundtrip(tmp_path):
    v = pol.toy_vocabulary(12)
    p = pol.PolicyParams.init(12, 4, seed=7)
    path = tmp_path / "c.npz"
    pol.save_checkpoint(path, p, v, {"stage": "rc"})
    q, v2, meta = pol.load_checkpoint(path)
    np.testing.assert_array_equal(p.flat, q.flat)
    assert q.flat.tobytes() == p.flat.tobytes()
    assert v2.entries == v.entries and meta == {"stage": "rc"}
    assert [f.name for f in tmp_path.iterdir()] == ["c.npz"]


def test_checkpoint_errors(tmp_path):
    with pytest.raises(pol.CheckpointError):
        pol.load_checkpoint(tmp_path / "missing.npz")
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(pol.CheckpointError):
        pol.load_checkpoint(bad)
