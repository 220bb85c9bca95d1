import json
import math
from collections import Counter

import pytest

from scaffold_rl import synthdata as sd
from scaffold_rl.errors import WorldTooSmall
from scaffold_rl.evaluation import LABELS, extract_answer, read_benchmark, score_benchmark
from scaffold_rl.textlang import hindi_fraction


@pytest.fixture(scope="module")
def world():
    return sd.generate_world(sd.WorldSpec(), 700)


def test_split_sizes(world):
    assert len(world.train) == 560 and len(world.eval) == 140


def test_disjoint_keys_small_world():
    w = sd.generate_world(sd.WorldSpec(n_cues=2, n_fillers=5), 100)
    train_keys = {it.key for it in w.train}
    assert all(it.key not in train_keys for it in w.eval)


def test_disjoint_keys_exhaustive(world):
    train_keys = {it.key for it in world.train}
    eval_keys = {it.key for it in world.eval}
    assert train_keys.isdisjoint(eval_keys)
    # each cue keeps train keys, so eval keys are learnable by generalisation
    assert {c for c, _ in eval_keys} <= {c for c, _ in train_keys}


def test_deterministic():
    a = sd.generate_world(sd.WorldSpec(seed=4), 200)
    b = sd.generate_world(sd.WorldSpec(seed=4), 200)
    assert a.train == b.train and a.eval == b.eval and a.cue_letter == b.cue_letter
    c = sd.generate_world(sd.WorldSpec(seed=5), 200)
    assert c.train != a.train


def test_gold_uniform_within_three_sigma():
    n = 10_000
    w = sd.generate_world(sd.WorldSpec(seed=1), n)
    counts = Counter(it.gold for it in w.train + w.eval)
    p = 1 / 5
    sigma = math.sqrt(n * p * (1 - p))
    for lab in LABELS[:5]:
        assert abs(counts[lab] - n * p) <= 3 * sigma, (lab, counts)


def test_gold_is_function_of_cue(world):
    for it in world.train + world.eval:
        assert it.gold == world.cue_letter[it.cue]


def test_lookup_oracle_solves_both_splits(world):
    def oracle(item, seed):
        cue = int(item.question.split()[1][1:])
        return f"Answer: {world.cue_letter[cue]}"

    for split in (world.train, world.eval):
        for lang in ("hi", "en"):
            rep = score_benchmark(oracle, [it.mcq(lang) for it in split], runs=1)
            assert rep.accuracy == 1.0


def test_registers(world):
    item = world.train[0]
    hi_ids = world.vocab.encode(item.cot_hi)
    en_ids = world.vocab.encode(item.cot_en)
    toks = lambda ids: [world.vocab.token(i) for i in ids]
    assert hindi_fraction(toks(en_ids)) == 0.0
    assert hindi_fraction(toks(hi_ids)) > 0.5
    assert set(item.options_hi) == set(item.options_en)


def test_term_rate_zero_gives_pure_hindi():
    w = sd.generate_world(sd.WorldSpec(term_rate=0.0), 50)
    assert all("(" not in it.cot_hi for it in w.train)


def test_targets_encode(world):
    item = world.train[0]
    for text in (sd.la_target(item), sd.rc_target(item, item.cot_en)):
        world.vocab.encode(text)
    rc = sd.rc_target(item, item.cot_hi)
    assert extract_answer(rc, item.mcq("hi")).label == item.gold


def test_rc_cot_choice_ratio(world):
    cots = sd.rc_cot_choice(world.train, 0.4, seed=0)
    share = sum(c == it.cot_hi for c, it in zip(cots, world.train)) / len(cots)
    assert abs(share - 0.4) < 0.1
    assert cots == sd.rc_cot_choice(world.train, 0.4, seed=0)


@pytest.mark.parametrize("n", [0, 1])
def test_too_small(n):
    with pytest.raises(WorldTooSmall):
        sd.generate_world(sd.WorldSpec(), n)


def test_single_filler_cannot_split():
    with pytest.raises(WorldTooSmall):
        sd.generate_world(sd.WorldSpec(n_fillers=1), 10)


def test_write_read_round_trip(tmp_path, world):
    paths = sd.write_world(world, tmp_path / "w")
    manifest = json.loads(open(paths["manifest"]).read())
    assert manifest["n_train"] == 560 and manifest["spec"]["seed"] == 0
    back = sd.read_world(tmp_path / "w")
    assert back.train == world.train
    assert [it.id for it in read_benchmark(paths["eval_hi"])] == [it.id for it in world.eval]


def test_write_is_byte_identical(tmp_path):
    w = sd.generate_world(sd.WorldSpec(seed=2), 100)
    a = sd.write_world(w, tmp_path / "a")
    b = sd.write_world(sd.generate_world(sd.WorldSpec(seed=2), 100), tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read()


def test_read_detects_tampering(tmp_path):
    w = sd.generate_world(sd.WorldSpec(), 50)
    paths = sd.write_world(w, tmp_path)
    lines = open(paths["train"]).read().splitlines()
    open(paths["train"], "w").write("\n".join(lines[:-2]) + "\n")
    with pytest.raises(ValueError, match="does not match"):
        sd.read_world(tmp_path)
