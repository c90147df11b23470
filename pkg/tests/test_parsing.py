from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from owg.errors import ArityViolation, MissingAnswerBlock, OutOfRangeId, ParseError
from owg.parsing import extract_marked_ids, majority_vote, parse_final_answer, parse_ground, parse_plan, parse_rank


@pytest.mark.parametrize("text,ids", [
    ("The target is [7].", [7]),
    ("Remove [3], then [12].", [3, 12]),
    ("choose [a] then [4]", [4]),
    ("[ 5 ] and [5]", [5, 5]),
    ("none", []),
])
def test_extract_marked_ids(text, ids):
    assert extract_marked_ids(text) == ids


def test_final_answer_variants():
    assert parse_final_answer("…reasoning…\nANSWER: [4]", "ground") == [4]
    assert parse_final_answer("ANSWER: [2, 5, 1]", "plan") == [2, 5, 1]
    assert parse_final_answer("**ANSWER:** [3]", "ground") == [3]
    assert parse_final_answer("ANSWER: [1]\nthen\nANSWER: [2]", "ground") == [2]  # last one wins
    with pytest.raises(MissingAnswerBlock):
        parse_final_answer("I think it is [3].", "ground")
    with pytest.raises(ArityViolation):
        parse_final_answer("ANSWER: [1, 2]", "ground")
    with pytest.raises(ArityViolation):
        parse_final_answer("ANSWER: []", "plan")
    with pytest.raises(ParseError):
        parse_final_answer("ANSWER: [x]", "plan")
    with pytest.raises(ValueError):
        parse_final_answer("ANSWER: [1]", "dance")


def test_parse_ground():
    g = parse_ground("The mug [3] is left of the bowl [5].\nANSWER: [3]", {1, 2, 3, 4, 5})
    assert g.target_id == 3 and g.mentioned_ids == [3, 5, 3]
    assert g.target_id in g.mentioned_ids
    with pytest.raises(OutOfRangeId):
        parse_ground("ANSWER: [9]", {1, 2})


def test_parse_plan_rules():
    p = parse_plan("Objects [4] and [6] block [2].\nANSWER: [4, 6, 2]", 2)
    assert p.sequence == [4, 6, 2] and p.blockers == {4, 6}
    assert parse_plan("ANSWER: [4, 4, 2]", 2).sequence == [4, 2]
    assert parse_plan("ANSWER: [4, 2, 5]", 2).sequence == [4, 2]
    assert parse_plan("ANSWER: [4]", 2).sequence == [4, 2]
    with pytest.raises(OutOfRangeId):
        parse_plan("ANSWER: [7, 2]", 2, {1, 2, 3})


def test_parse_rank_examples():
    assert parse_rank("ANSWER: [2, 3, 1]", 3).order == [2, 3, 1]
    assert parse_rank("ANSWER: [2]", 3).order == [2, 1, 3]
    with pytest.raises(OutOfRangeId):
        parse_rank("ANSWER: [4]", 3)
    with pytest.raises(OutOfRangeId):
        parse_rank("ANSWER: [0]", 3)


def test_parse_rank_contact_region():
    text = ("(i) A mug; grasp the handle side [1].\n"
            "(ii) Grasps [2] and [4] touch the bowl.\n"
            "(iii) Ranking: [1] is best.\nANSWER: [1, 3, 2, 4]")
    r = parse_rank(text, 4)
    assert r.contact_flagged == {2, 4}
    assert parse_rank("ANSWER: [1]", 2).contact_flagged == frozenset()


@given(st.lists(st.integers(-2, 12), max_size=15), st.integers(1, 10))
def test_parse_rank_always_permutation(ids, k):
    text = "ANSWER: [" + ", ".join(map(str, ids)) + "]"
    try:
        r = parse_rank(text, k)
    except OutOfRangeId:
        assert any(not 1 <= i <= k for i in ids)
        return
    assert sorted(r.order) == list(range(1, k + 1))
    firsts = list(dict.fromkeys(ids))
    assert r.order[: len(firsts)] == firsts


@pytest.mark.parametrize("values,expected", [([3, 3, 5], 3), ([1, 2, 2, 1, 4], 1), ([9], 9)])
def test_majority_vote_examples(values, expected):
    assert majority_vote(values) == expected


def _vote_oracle(values):
    counts = Counter(values)
    best = None
    for v in sorted(counts):
        if best is None or counts[v] > counts[best]:
            best = v
    return best


@given(st.lists(st.integers(1, 9), min_size=1, max_size=9), st.randoms())
def test_majority_vote_oracle_and_permutation_invariance(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert majority_vote(values) == _vote_oracle(values) == majority_vote(shuffled)


def test_majority_vote_empty():
    with pytest.raises(ValueError):
        majority_vote([])
