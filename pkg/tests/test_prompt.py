import pytest
from hypothesis import given, strategies as st

from gercs.errors import ContextOverflow, EmptyNBest, EmptyReference
from gercs.nbest import Hypothesis, NBestList
from gercs.prompt import EOS, PromptTemplate, format_prompt, make_pair, read_pairs, write_pairs

T = PromptTemplate()
GT = "persistent data这个东西当然不是他发明的"
CASE_HYPS = ["persistent date这个东西当然不是他发明的", "porsistent data这个东西当然不是它发明的",
          "颇虽私人的队的这个东西当然不是他发明的"]


def nbest(texts, utt="u"):
    return NBestList(utt, [Hypothesis(utt, "s", i + 1, t) for i, t in enumerate(texts)], {"s": len(texts)})


def test_three_entry_template():
    p = format_prompt(nbest(["他", "她", "它"]), T)
    assert p.tokens == ["<task>", "<best>", "他", "<hyp>", "她", "<hyp>", "它", "<out>"]
    assert not p.truncated


def test_single_entry_template():
    assert format_prompt(nbest(["他在"]), T).tokens == ["<task>", "<best>", "他", "在", "<out>"]


def test_overflow_flag():
    p = format_prompt(nbest([f"h{i}" for i in range(9)]), PromptTemplate(max_hyps=8))
    assert p.truncated and p.dropped == 1
    assert p.tokens.count("<hyp>") == 7
    assert p.tokens.count("<best>") == 1


def test_empty_list():
    with pytest.raises(EmptyNBest):
        format_prompt(nbest([]), T)


def test_casestudy_pair():
    pair = make_pair(nbest(CASE_HYPS), GT, T)
    assert pair.target_tokens[:-1] == ["persistent", "data", "这", "个", "东", "西", "当", "然",
                                       "不", "是", "他", "发", "明", "的"]
    assert pair.target_tokens[-1] == EOS
    assert sum(pair.loss_mask) == 15
    assert len(pair.loss_mask) == len(pair.input_tokens) + 15
    assert not any(pair.loss_mask[: len(pair.input_tokens)])


def test_copy_case_pair_is_emitted():
    pair = make_pair(nbest([GT]), GT, T)
    assert pair.target_tokens[:-1] == pair.input_tokens[2:-1]


def test_pair_errors():
    with pytest.raises(EmptyReference):
        make_pair(nbest(["他"]), "，", T)
    with pytest.raises(EmptyNBest):
        make_pair(nbest([]), GT, T)
    with pytest.raises(ContextOverflow) as e:
        make_pair(nbest([GT] * 8, utt="long-one"), GT, T, max_context=64)
    assert "long-one" in str(e.value)


def test_template_markers_distinct():
    with pytest.raises(ValueError):
        PromptTemplate(hyp_marker="<best>")


hyp_lists = st.lists(st.lists(st.sampled_from(["他", "在", "offer", "data"]), max_size=4)
                     .map(lambda ts: " ".join(ts)), min_size=1, max_size=10)


@given(hyp_lists)
def test_marker_counts(texts):
    p = format_prompt(nbest(texts), T)
    assert p.tokens.count("<hyp>") == min(len(texts), T.max_hyps) - 1
    assert p.tokens[0] == "<task>" and p.tokens[-1] == "<out>"


@given(hyp_lists, hyp_lists)
def test_injective(a, b):
    a, b = a[: T.max_hyps], b[: T.max_hyps]
    from gercs.textnorm import tokenize
    same_content = [tokenize(x).surfaces for x in a] == [tokenize(x).surfaces for x in b]
    assert (format_prompt(nbest(a), T).tokens == format_prompt(nbest(b), T).tokens) == same_content


def test_pairs_roundtrip(tmp_path):
    pairs = [make_pair(nbest(CASE_HYPS, "cs"), GT, T)]
    write_pairs(tmp_path / "p.jsonl", pairs)
    back = read_pairs(tmp_path / "p.jsonl")
    assert back[0].input_tokens == pairs[0].input_tokens and back[0].target_tokens == pairs[0].target_tokens
