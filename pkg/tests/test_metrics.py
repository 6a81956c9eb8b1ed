import itertools
import random
from functools import lru_cache

import pytest
from hypothesis import given, strategies as st

from gercs.errors import DuplicateUtterance, EmptyNBest, EmptyReference
from gercs.metrics import (EmptyNBestWarning, Op, align, evaluate, latin_recovery, oracle_cp, oracle_nbest, pct, score_corpus,
                           score_utterance)
from gercs.textnorm import tokenize

GT = "persistent data这个东西当然不是他发明的"
ASR1 = "persistent date这个东西当然不是他发明的"
ASR2 = "porsistent data这个东西当然不是它发明的"
ASR3 = "颇虽私人的队的这个东西当然不是他发明的"


def edit_distance_oracle(a, b):
    """Plain recursion over every edit script; independent of the DP table."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(
            d(i + 1, j + 1) + (a[i] != b[j]),
            d(i + 1, j) + 1,
            d(i, j + 1) + 1,
        )

    return d(0, 0)


def test_identity_alignment():
    a = align(tokenize("他在等offer"), tokenize("他在等offer"))
    assert a.errors == 0 and a.matches == 4
    assert [o.op for o in a.ops] == [Op.MATCH] * 4


def test_casestudy_asr1_single_substitution():
    a = align(tokenize(GT), tokenize(ASR1))
    assert (a.substitutions, a.deletions, a.insertions) == (1, 0, 0)
    sub = [o for o in a.ops if o.op is Op.SUB][0]
    assert (sub.ref_index, sub.hyp_index) == (1, 1)


def test_deletion_example():
    a = align(list("abc"), list("ac"))
    assert (a.substitutions, a.deletions, a.insertions) == (0, 1, 0)
    assert edit_distance_oracle("abc", "ac") == 1


@pytest.mark.parametrize("hyp,mer", [(ASR1, 7.1), (ASR2, 14.3), (ASR3, 50.0), (GT, 0.0)])
def test_casestudy_mer(hyp, mer):
    assert pct(score_utterance(GT, hyp).mer) == mer


def test_casestudy_asr3_counts():
    s = score_utterance(GT, ASR3)
    assert (s.errors, s.ref_len) == (7, 14)
    assert len(tokenize(ASR3)) == 19


def test_empty_reference():
    with pytest.raises(EmptyReference):
        score_utterance("", "他")


def test_corpus_micro_average():
    cs = score_corpus([("u1", GT, ASR1), ("u2", GT, ASR2)])
    assert (cs.total_errors, cs.total_ref_tokens) == (3, 28)
    assert pct(cs.mer) == 10.7


def test_corpus_degenerate_cases():
    assert score_corpus([("u1", GT, GT), ("u2", "他在等", "他在等")]).mer == 0.0
    single = score_corpus([("u1", GT, ASR2)])
    assert single.mer == score_utterance(GT, ASR2).mer


def test_corpus_duplicate_and_missing():
    with pytest.raises(DuplicateUtterance):
        score_corpus([("u1", GT, GT), ("u1", GT, GT)])
    cs = score_corpus([("u1", GT, None)])
    assert cs.missing == ["u1"] and cs.total_errors == 14


def test_oracle_nbest_casestudy():
    o = oracle_nbest(GT, [ASR1, ASR2, ASR3])
    assert pct(o.mer) == 7.1 and o.best_index == 0
    assert oracle_nbest(GT, [ASR2, GT]).mer == 0.0
    with pytest.raises(EmptyNBest):
        oracle_nbest(GT, [])


def test_oracle_nbest_ties_prefer_first():
    o = oracle_nbest("他在等", ["他在灯", "它在等"])
    assert o.best_index == 0


def test_oracle_nbest_is_min_over_random_corruptions():
    rng = random.Random(3)
    ref = list("abcdefghij")
    hyps = []
    for _ in range(5):
        h = [c if rng.random() > 0.3 else rng.choice("xyz") for c in ref]
        hyps.append(" ".join(h))
    ref_text = " ".join(ref)
    brute = min(edit_distance_oracle(ref, h.split()) for h in hyps) / len(ref)
    assert oracle_nbest(ref_text, hyps).mer == brute


def test_oracle_cp_casestudy():
    assert oracle_cp(GT, [ASR1, ASR2, ASR3]) == 0.0
    no_data = [h.replace("data", "") for h in (ASR1, ASR2, ASR3)]
    assert oracle_cp(GT, no_data) == pytest.approx(1 / 14)
    assert pct(oracle_cp(GT, no_data)) == 7.1


def test_oracle_cp_empty_list_warns():
    with pytest.warns(EmptyNBestWarning):
        assert oracle_cp(GT, []) == 1.0


def test_alignment_exhaustive_short_sequences():
    seqs = [s for n in range(4) for s in itertools.product("abcd", repeat=n)]
    for a in seqs:
        for b in seqs:
            assert align(list(a), list(b)).errors == edit_distance_oracle(a, b)


seq4 = st.lists(st.sampled_from("abcd"), max_size=6)


@given(seq4, seq4)
def test_alignment_matches_oracle(a, b):
    res = align(a, b)
    assert res.errors == edit_distance_oracle(a, b)
    assert res.substitutions + res.deletions + res.matches == len(a)
    assert res.substitutions + res.insertions + res.matches == len(b)
    # ops replay: every ref and hyp index visited once, in order
    assert [o.ref_index for o in res.ops if o.ref_index is not None] == list(range(len(a)))
    assert [o.hyp_index for o in res.ops if o.hyp_index is not None] == list(range(len(b)))


@given(seq4, seq4)
def test_cost_symmetry(a, b):
    fwd, back = align(a, b), align(b, a)
    assert fwd.errors == back.errors
    assert fwd.deletions - fwd.insertions == back.insertions - back.deletions


@given(st.lists(st.tuples(seq4.filter(bool), seq4), min_size=1, max_size=6), st.randoms())
def test_corpus_order_invariant(items, rnd):
    triples = [(f"u{i}", a, b) for i, (a, b) in enumerate(items)]
    shuffled = triples[:]
    rnd.shuffle(shuffled)
    assert score_corpus(triples).mer == score_corpus(shuffled).mer


@given(seq4.filter(bool), st.lists(seq4, max_size=4))
def test_oracle_ordering_and_reference_injection(ref, hyps):
    if hyps:
        nb = oracle_nbest(ref, hyps)
        assert oracle_cp(ref, hyps) <= nb.mer
        assert all(nb.mer <= score_utterance(ref, h).mer for h in hyps)
    with_ref = hyps + [ref]
    assert oracle_nbest(ref, with_ref).mer == 0.0
    assert oracle_cp(ref, with_ref) == 0.0


def test_evaluate_report_schema():
    refs = {"u1": GT}
    rep = evaluate(refs, {"asr1": {"u1": ASR1}, "asr2": {"u1": ASR2}}, {"u1": [ASR1, ASR2, ASR3]}, primary="asr1")
    js = rep.to_json()
    assert js["corpus_mer"] == 7.1 and js["oracle_nb"] == 7.1 and js["oracle_cp"] == 0.0
    assert js["per_system"] == {"asr1": 7.1, "asr2": 14.3}
    assert set(js["utterances"][0]) >= {"utt_id", "errors", "ref_len", "mer", "best_system"}


def test_evaluate_flags_missing_outputs():
    rep = evaluate({"u1": GT, "u2": "他在等"}, {"s": {"u1": GT}}, None)
    assert rep.missing == {"s": ["u2"]}
    assert rep.per_system["s"] == 3 / 17


def test_latin_recovery():
    ref = "他在等offer和offer"
    hyps = ["他在等奥佛和奥佛"]
    assert latin_recovery(ref, hyps, "他在等offer和offer") == (2, 2)
    assert latin_recovery(ref, hyps, "他在等offer") == (1, 2)
    assert latin_recovery(ref, hyps, hyps[0]) == (0, 2)
    # words already present in Latin form are not counted
    assert latin_recovery(GT, [ASR1], GT) == (1, 1)
