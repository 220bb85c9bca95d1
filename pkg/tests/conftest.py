import numpy as np
import pytest

from scaffold_rl import objective as obj
from scaffold_rl import policy as pol


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dsr_instance(rng, vocab_size=None, k=None, n_prompts=None, max_len=8, dim=None,
                        scale=0.5):
    """Tiny random batch: params, old-policy samples, ref snapshot, advantages, masks."""
    V = vocab_size or int(rng.integers(4, 65))
    d = dim or int(rng.integers(2, 7))
    K = k or int(rng.choice([2, 4, 8]))
    P = n_prompts or int(rng.integers(1, 3))
    params = pol.PolicyParams.init(V, d, seed=int(rng.integers(1 << 30)), scale=scale)
    old = pol.PolicyParams.init(V, d, seed=int(rng.integers(1 << 30)), scale=scale)
    ref = pol.PolicyParams.init(V, d, seed=int(rng.integers(1 << 30)), scale=scale)
    prompts = [list(rng.integers(1, V, size=int(rng.integers(1, 4)))) for _ in range(P)]
    seqs, prompt_of, logp_old = [], [], []
    for p in range(P):
        for _ in range(K):
            L = int(rng.integers(1, max_len + 1))
            s = [int(x) for x in rng.integers(0, V, size=L)]
            seqs.append(s)
            prompt_of.append(p)
            logp_old.append(pol.log_prob(old, s, prompts[p], bos=0))
    n = len(seqs)
    adv_acc = rng.normal(size=n)
    adv_lan = rng.normal(size=n)
    masks = [(rng.random(len(s)) < 0.8).astype(float) for s in seqs]
    batch = obj.build_batch(ref, prompts, seqs, prompt_of, logp_old, adv_acc, adv_lan, masks, 0)
    return params, batch


# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
